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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/error.hpp"
#include "cva/hashing.hpp"

namespace cva {

/// Dense embedding. Values are kept in double precision so that the cache and
/// every downstream comparison are bit-exact.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::size_t dim) : values_(dim, 0.0) {}
  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t dim() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return std::sqrt(s);
  }

  bool is_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  EmbeddingVector& operator+=(const EmbeddingVector& other) {
    if (other.dim() != dim()) {
      throw Error(Errc::DimMismatch, std::to_string(dim()) + " vs " + std::to_string(other.dim()));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  friend EmbeddingVector operator+(EmbeddingVector a, const EmbeddingVector& b) { return a += b; }

  EmbeddingVector scaled(double s) const {
    EmbeddingVector out = *this;
    for (double& v : out.values_) v *= s;
    return out;
  }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Turns texts into vectors. Implementations must tolerate concurrent
/// embed_batch calls.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) = 0;
};

inline EmbeddingVector embed_text(EmbeddingBackend& backend, const std::string& text) {
  auto out = backend.embed_batch(std::span<const std::string>(&text, 1));
  if (out.size() != 1) throw Error(Errc::BackendUnavailable, backend.name() + " returned no vector");
  return std::move(out.front());
}

/// Deterministic offline embedder: lowercased character trigrams (with
/// boundary markers) hashed into `dim` buckets by FNV-1a, then L2-normalized.
class LocalHashBackend final : public EmbeddingBackend {
 public:
  static constexpr std::size_t kDefaultDim = 1024;
  static constexpr char kBegin = '\x02';
  static constexpr char kEnd = '\x03';

  explicit LocalHashBackend(std::size_t dim = kDefaultDim) : dim_(dim) {
    if (dim_ == 0) throw Error(Errc::InvalidArgument, "embedding dim must be positive");
  }

  std::string name() const override { return "local-trigram-" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

  EmbeddingVector embed_one(std::string_view text) const {
    EmbeddingVector v(dim_);
    if (text.empty()) return v;
    std::string padded;
    padded.reserve(text.size() + 2);
    padded.push_back(kBegin);
    for (char c : text) padded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    padded.push_back(kEnd);
    auto& values = v.mutable_values();
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      const auto bucket = fnv1a64(std::string_view(padded).substr(i, 3)) % dim_;
      values[bucket] += 1.0;
    }
    const double n = v.norm();
    for (double& x : values) x /= n;
    return v;
  }

 private:
  std::size_t dim_;
};

enum class MetadataStrategy { Label, LabelConcatTableName, LabelSumTableName };
enum class GlossaryStrategy { Label, LabelConcatDesc, Desc, DescSumLabel };

constexpr std::string_view to_string(MetadataStrategy s) {
  switch (s) {
    case MetadataStrategy::Label: return "label";
    case MetadataStrategy::LabelConcatTableName: return "label-concat-table";
    case MetadataStrategy::LabelSumTableName: return "label-sum-table";
  }
  return "?";
}

constexpr std::string_view to_string(GlossaryStrategy s) {
  switch (s) {
    case GlossaryStrategy::Label: return "label";
    case GlossaryStrategy::LabelConcatDesc: return "label-concat-desc";
    case GlossaryStrategy::Desc: return "desc";
    case GlossaryStrategy::DescSumLabel: return "desc-sum-label";
  }
  return "?";
}

/// Formula form used in strategy reports, e.g. "encode(label) + encode(table_name)".
constexpr std::string_view describe(MetadataStrategy s) {
  switch (s) {
    case MetadataStrategy::Label: return "encode(label)";
    case MetadataStrategy::LabelConcatTableName: return "encode(label + table_name)";
    case MetadataStrategy::LabelSumTableName: return "encode(label) + encode(table_name)";
  }
  return "?";
}

constexpr std::string_view describe(GlossaryStrategy s) {
  switch (s) {
    case GlossaryStrategy::Label: return "encode(label)";
    case GlossaryStrategy::LabelConcatDesc: return "encode(label + desc)";
    case GlossaryStrategy::Desc: return "encode(desc)";
    case GlossaryStrategy::DescSumLabel: return "encode(desc) + encode(label)";
  }
  return "?";
}

inline MetadataStrategy parse_metadata_strategy(std::string_view s) {
  for (auto v : {MetadataStrategy::Label, MetadataStrategy::LabelConcatTableName, MetadataStrategy::LabelSumTableName}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::InvalidArgument, "unknown metadata strategy '" + std::string(s) + "'");
}

inline GlossaryStrategy parse_glossary_strategy(std::string_view s) {
  for (auto v : {GlossaryStrategy::Label, GlossaryStrategy::LabelConcatDesc, GlossaryStrategy::Desc,
                 GlossaryStrategy::DescSumLabel}) {
    if (to_string(v) == s) return v;
  }
  throw Error(Errc::InvalidArgument, "unknown glossary strategy '" + std::string(s) + "'");
}

/// Texts whose embeddings are summed to form the composed vector. A
/// single-element list means concatenate-then-encode (or a plain field).
inline std::vector<std::string> composition_parts(MetadataStrategy s, const ColumnMetadata& m) {
  switch (s) {
    case MetadataStrategy::Label: return {m.label};
    case MetadataStrategy::LabelConcatTableName: return {m.label + " " + m.table_name};
    case MetadataStrategy::LabelSumTableName: return {m.label, m.table_name};
  }
  return {};
}

inline std::vector<std::string> composition_parts(GlossaryStrategy s, const GlossaryEntry& g) {
  switch (s) {
    case GlossaryStrategy::Label: return {g.label};
    case GlossaryStrategy::LabelConcatDesc: return {g.label + " " + g.desc};
    case GlossaryStrategy::Desc: return {g.desc};
    case GlossaryStrategy::DescSumLabel: return {g.desc, g.label};
  }
  return {};
}

inline EmbeddingVector sum_parts(EmbeddingBackend& backend, const std::vector<std::string>& parts) {
  auto vecs = backend.embed_batch(parts);
  if (vecs.size() != parts.size()) throw Error(Errc::BackendUnavailable, backend.name() + " returned wrong count");
  EmbeddingVector acc = std::move(vecs.front());
  for (std::size_t i = 1; i < vecs.size(); ++i) acc += vecs[i];
  return acc;
}

inline EmbeddingVector compose_metadata_embedding(MetadataStrategy s, const ColumnMetadata& m,
                                                  EmbeddingBackend& backend) {
  return sum_parts(backend, composition_parts(s, m));
}

inline EmbeddingVector compose_glossary_embedding(GlossaryStrategy s, const GlossaryEntry& g,
                                                  EmbeddingBackend& backend) {
  return sum_parts(backend, composition_parts(s, g));
}

struct EmbeddedCorpus {
  std::vector<EmbeddingVector> metadata;
  std::vector<EmbeddingVector> glossary;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  Warnings warnings;
};

namespace detail {

inline std::string content_key(const std::vector<std::string>& parts) {
  std::uint64_t h = kFnvOffset64;
  for (const auto& p : parts) {
    h = fnv1a64(p, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return to_hex(h) + "-" + std::to_string(parts.size());
}

inline std::string sanitize_filename(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return out;
}

/// One JSONL file per (backend, side, strategy); each line is
/// {"key": <content hash>, "vector": [...]}. A sibling manifest records the
/// backend name, dim and the content hashes present in each file.
class VectorCache {
 public:
  VectorCache(std::filesystem::path dir, std::string backend, std::size_t dim, std::string side, std::string strategy)
      : dir_(std::move(dir)), backend_(std::move(backend)), dim_(dim), side_(std::move(side)),
        strategy_(std::move(strategy)) {
    file_ = sanitize_filename(backend_) + "__" + side_ + "__" + strategy_ + ".jsonl";
  }

  /// Loads the cache file; corruption is reported and the cache starts empty.
  void load(Warnings& warnings) {
    entries_.clear();
    const auto path = dir_ / file_;
    if (!std::filesystem::exists(path)) return;
    try {
      detail::for_each_line(path, [&](std::size_t lineno, const std::string& line) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("key") || !j.contains("vector")) {
          throw Error(Errc::CacheCorrupt, file_ + " line " + std::to_string(lineno));
        }
        auto values = j["vector"].get<std::vector<double>>();
        if (values.size() != dim_) throw Error(Errc::CacheCorrupt, file_ + " dim mismatch at line " + std::to_string(lineno));
        entries_[j["key"].get<std::string>()] = EmbeddingVector(std::move(values));
      });
    } catch (const std::exception& e) {
      warnings.push_back(std::string("cache ignored, recomputing: ") + e.what());
      entries_.clear();
    }
  }

  const EmbeddingVector* find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  void put(const std::string& key, const EmbeddingVector& v) { entries_[key] = v; }

  void save() const {
    std::string body;
    nlohmann::json hashes = nlohmann::json::array();
    for (const auto& [key, v] : entries_) {
      nlohmann::ordered_json j;
      j["key"] = key;
      j["vector"] = std::vector<double>(v.values().begin(), v.values().end());
      body += j.dump();
      body += '\n';
      hashes.push_back(key);
    }
    write_file(dir_ / file_, body);

    const auto manifest_path = dir_ / "cache_manifest.json";
    nlohmann::json manifest = nlohmann::json::object();
    if (std::filesystem::exists(manifest_path)) {
      manifest = nlohmann::json::parse(read_file(manifest_path), nullptr, false);
      if (manifest.is_discarded() || !manifest.is_object()) manifest = nlohmann::json::object();
    }
    manifest[file_] = {{"backend", backend_}, {"dim", dim_}, {"side", side_}, {"strategy", strategy_},
                       {"hashes", hashes}};
    write_file(manifest_path, manifest.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::string backend_;
  std::size_t dim_;
  std::string side_;
  std::string strategy_;
  std::string file_;
  std::map<std::string, EmbeddingVector> entries_;
};

/// Embeds every composed record, consulting the cache first. Distinct texts
/// are sent to the backend once, in a single batch.
inline std::vector<EmbeddingVector> embed_records(const std::vector<std::vector<std::string>>& parts_per_record,
                                                  EmbeddingBackend& backend, VectorCache* cache, EmbeddedCorpus& stats) {
  std::vector<EmbeddingVector> out(parts_per_record.size());
  std::vector<std::size_t> missing;
  std::vector<std::string> keys(parts_per_record.size());
  for (std::size_t i = 0; i < parts_per_record.size(); ++i) {
    keys[i] = content_key(parts_per_record[i]);
    if (cache) {
      if (const auto* hit = cache->find(keys[i])) {
        out[i] = *hit;
        ++stats.cache_hits;
        continue;
      }
    }
    missing.push_back(i);
  }
  stats.cache_misses += missing.size();
  if (missing.empty()) return out;

  std::vector<std::string> texts;
  std::unordered_map<std::string, std::size_t> slot;
  for (auto i : missing) {
    for (const auto& p : parts_per_record[i]) {
      if (slot.emplace(p, texts.size()).second) texts.push_back(p);
    }
  }
  auto vecs = backend.embed_batch(texts);
  if (vecs.size() != texts.size()) {
    throw Error(Errc::BackendUnavailable, backend.name() + " returned " + std::to_string(vecs.size()) +
                                              " vectors for " + std::to_string(texts.size()) + " texts");
  }
  for (auto i : missing) {
    const auto& parts = parts_per_record[i];
    EmbeddingVector acc = vecs[slot.at(parts.front())];
    for (std::size_t p = 1; p < parts.size(); ++p) acc += vecs[slot.at(parts[p])];
    if (acc.dim() != backend.dim()) throw Error(Errc::DimMismatch, backend.name() + " produced a vector of wrong dim");
    if (!acc.all_finite()) throw Error(Errc::BackendUnavailable, backend.name() + " produced non-finite values");
    if (cache) cache->put(keys[i], acc);
    out[i] = std::move(acc);
  }
  if (cache) cache->save();
  return out;
}

}  // namespace detail

/// Embeds both sides of a corpus under the chosen strategies. When
/// `cache_dir` is non-empty, vectors are cached per (backend, strategy) and
/// keyed by a hash of the composed texts.
inline EmbeddedCorpus embed_corpus(const Corpus& corpus, MetadataStrategy ms, GlossaryStrategy gs,
                                   EmbeddingBackend& backend, const std::filesystem::path& cache_dir = {}) {
  EmbeddedCorpus result;
  const bool use_cache = !cache_dir.empty();

  std::vector<std::vector<std::string>> meta_parts;
  meta_parts.reserve(corpus.columns.size());
  for (const auto& c : corpus.columns) meta_parts.push_back(composition_parts(ms, c));
  std::vector<std::vector<std::string>> gloss_parts;
  gloss_parts.reserve(corpus.glossary.size());
  for (const auto& g : corpus.glossary) gloss_parts.push_back(composition_parts(gs, g));

  if (use_cache) {
    detail::VectorCache meta_cache(cache_dir, backend.name(), backend.dim(), "metadata", std::string(to_string(ms)));
    detail::VectorCache gloss_cache(cache_dir, backend.name(), backend.dim(), "glossary", std::string(to_string(gs)));
    meta_cache.load(result.warnings);
    gloss_cache.load(result.warnings);
    result.metadata = detail::embed_records(meta_parts, backend, &meta_cache, result);
    result.glossary = detail::embed_records(gloss_parts, backend, &gloss_cache, result);
  } else {
    result.metadata = detail::embed_records(meta_parts, backend, nullptr, result);
    result.glossary = detail::embed_records(gloss_parts, backend, nullptr, result);
  }
  return result;
}

}  // namespace cva
