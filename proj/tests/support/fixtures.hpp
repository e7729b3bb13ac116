// Copyright 2026 The CVA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/hashing.hpp"

namespace cva::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cva") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Code of the cva::Error thrown by f, or nullopt if nothing was thrown.
template <typename Fn>
std::optional<Errc> error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline ColumnMetadata column(std::string id, std::string label, std::string table_name = "T",
                             std::vector<std::string> siblings = {}) {
  ColumnMetadata m;
  m.id = std::move(id);
  m.label = std::move(label);
  m.table_id = "t-" + table_name;
  m.table_name = std::move(table_name);
  m.table_columns = siblings.empty() ? std::vector<std::string>{m.label} : std::move(siblings);
  return m;
}

inline GlossaryEntry entry(std::string id, std::string label, std::string desc = {}) {
  return GlossaryEntry{std::move(id), std::move(label), std::move(desc)};
}

/// Distinct lowercase pseudo-words; two or three syllables joined by spaces.
inline std::vector<std::string> unique_labels(std::size_t n, std::uint64_t seed) {
  static const char* syllables[] = {"ka", "lo", "mir", "tes", "ban", "ori", "zel", "pu",  "dra", "fen",
                                    "gol", "hui", "jas", "kep", "lum", "nor", "pix", "qua", "ros", "sil",
                                    "tor", "ulm", "vex", "wan", "yor", "zim", "ast", "bel", "cor", "dun"};
  constexpr std::size_t n_syl = sizeof(syllables) / sizeof(syllables[0]);
  std::mt19937_64 rng(seed);
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string label;
    const int words = 1 + static_cast<int>(rng() % 2);
    for (int w = 0; w < words; ++w) {
      if (w) label += ' ';
      const int parts = 2 + static_cast<int>(rng() % 2);
      for (int p = 0; p < parts; ++p) label += syllables[rng() % n_syl];
    }
    if (seen.insert(label).second) out.push_back(label);
  }
  return out;
}

/// Synthetic corpus with the given sizes. Glossary ids are "g<i>", column ids
/// "c<i>"; the first min(n_columns, n_glossary) columns reuse glossary labels.
inline Corpus synthetic_corpus(std::size_t n_columns, std::size_t n_glossary, std::uint64_t seed = 1) {
  Corpus c;
  const auto labels = unique_labels(n_glossary + n_columns, seed);
  for (std::size_t i = 0; i < n_glossary; ++i) {
    c.glossary.push_back(entry("g" + std::to_string(i), labels[i], "about " + labels[i]));
  }
  for (std::size_t i = 0; i < n_columns; ++i) {
    const std::string& label = i < n_glossary ? labels[i] : labels[n_glossary + i];
    const std::string table = "table" + std::to_string(i / 5);
    c.columns.push_back(column("c" + std::to_string(i), label, table, {label, "name", "year"}));
  }
  return c;
}

/// Corpus whose glossary is built from the columns' own labels.
inline Corpus self_glossary_corpus(std::size_t n_columns, std::uint64_t seed = 7) {
  Corpus c;
  const auto labels = unique_labels(n_columns, seed);
  for (std::size_t i = 0; i < n_columns; ++i) {
    c.columns.push_back(column("c" + std::to_string(i), labels[i], "table" + std::to_string(i / 4)));
    c.glossary.push_back(entry("g" + std::to_string(i), labels[i], "the " + labels[i]));
  }
  return c;
}

inline GroundTruth self_truth(const Corpus& c) {
  GroundTruth gt;
  for (std::size_t i = 0; i < c.columns.size(); ++i) gt.truth[c.columns[i].id] = {c.glossary[i].id};
  return gt;
}

inline void write_corpus_files(const Corpus& c, const std::filesystem::path& metadata,
                               const std::filesystem::path& glossary) {
  write_file(metadata, to_jsonl(c.columns));
  write_file(glossary, to_jsonl(c.glossary));
}

/// Wraps a backend and counts embed_batch calls and texts.
class CountingBackend final : public EmbeddingBackend {
 public:
  explicit CountingBackend(EmbeddingBackend& inner) : inner_(inner) {}
  std::string name() const override { return inner_.name(); }
  std::size_t dim() const override { return inner_.dim(); }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    ++calls;
    n_texts += texts.size();
    return inner_.embed_batch(texts);
  }
  std::atomic<std::size_t> calls{0};
  std::atomic<std::size_t> n_texts{0};

 private:
  EmbeddingBackend& inner_;
};

}  // namespace cva::testing
