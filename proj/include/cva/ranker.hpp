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

// Exact cosine top-k retrieval over a glossary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"

namespace cva {

inline constexpr std::size_t kDefaultTopK = 5;

struct RankedEntry {
  std::string glossary_id;
  std::optional<double> score;  // unset for LLM-produced rankings

  bool operator==(const RankedEntry&) const = default;
};

/// Glossary ids for one column, most relevant first.
struct RankedMapping {
  std::string column_id;
  std::vector<RankedEntry> ranked;

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(ranked.size());
    for (const auto& r : ranked) out.push_back(r.glossary_id);
    return out;
  }

  bool operator==(const RankedMapping&) const = default;
};

/// Cosine similarity; 0 when either side is the zero vector.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::DimMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values(), b.values()); }

/// Immutable row-major matrix of glossary vectors with precomputed norms.
/// Safe to query from several threads at once.
class SimilarityIndex {
 public:
  static SimilarityIndex build(std::vector<std::string> ids, const std::vector<EmbeddingVector>& vectors) {
    if (ids.size() != vectors.size()) {
      throw Error(Errc::InvalidArgument,
                  std::to_string(ids.size()) + " ids for " + std::to_string(vectors.size()) + " vectors");
    }
    if (ids.empty()) throw Error(Errc::EmptyIndex, "no glossary vectors");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "glossary " + id);
    }
    SimilarityIndex index;
    index.dim_ = vectors.front().dim();
    index.data_.reserve(index.dim_ * vectors.size());
    index.norms_.reserve(vectors.size());
    for (const auto& v : vectors) {
      if (v.dim() != index.dim_) {
        throw Error(Errc::DimMismatch, "row of dim " + std::to_string(v.dim()) + " in index of dim " +
                                           std::to_string(index.dim_));
      }
      index.data_.insert(index.data_.end(), v.values().begin(), v.values().end());
      index.norms_.push_back(v.norm());
    }
    index.ids_ = std::move(ids);
    return index;
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  /// Highest-cosine entries in descending score; equal scores are ordered by
  /// ascending glossary id. k larger than the index returns every entry.
  std::vector<RankedEntry> top_k(const EmbeddingVector& query, std::size_t k = kDefaultTopK) const {
    if (k == 0) throw Error(Errc::InvalidArgument, "k must be positive");
    if (query.dim() != dim_) {
      throw Error(Errc::DimMismatch, "query dim " + std::to_string(query.dim()) + ", index dim " + std::to_string(dim_));
    }
    const double qn = query.norm();
    std::vector<double> scores(ids_.size(), 0.0);
    if (qn > 0.0) {
      const auto q = query.values();
      for (std::size_t r = 0; r < ids_.size(); ++r) {
        if (norms_[r] == 0.0) continue;
        const auto row_values = row(r);
        double dot = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) dot += q[i] * row_values[i];
        scores[r] = dot / (qn * norms_[r]);
      }
    }
    std::vector<std::size_t> order(ids_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t n = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (scores[a] != scores[b]) return scores[a] > scores[b];
                        return ids_[a] < ids_[b];
                      });
    std::vector<RankedEntry> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back({ids_[order[i]], scores[order[i]]});
    return out;
  }

 private:
  SimilarityIndex() = default;

  std::vector<std::string> ids_;
  std::vector<double> data_;
  std::vector<double> norms_;
  std::size_t dim_ = 0;
};

inline SimilarityIndex build_index(std::vector<std::string> ids, const std::vector<EmbeddingVector>& vectors) {
  return SimilarityIndex::build(std::move(ids), vectors);
}

/// Embeds the corpus under the given strategies and ranks the glossary for
/// every column, in corpus order.
inline std::vector<RankedMapping> rank_corpus(const Corpus& corpus, MetadataStrategy ms, GlossaryStrategy gs,
                                              EmbeddingBackend& backend, std::size_t k = kDefaultTopK,
                                              const std::filesystem::path& cache_dir = {}) {
  auto embedded = embed_corpus(corpus, ms, gs, backend, cache_dir);
  std::vector<std::string> ids;
  ids.reserve(corpus.glossary.size());
  for (const auto& g : corpus.glossary) ids.push_back(g.id);
  const auto index = build_index(std::move(ids), embedded.glossary);
  std::vector<RankedMapping> out;
  out.reserve(corpus.columns.size());
  for (std::size_t i = 0; i < corpus.columns.size(); ++i) {
    out.push_back({corpus.columns[i].id, index.top_k(embedded.metadata[i], k)});
  }
  return out;
}

/// {"colID": ..., "propID": [...]} per line.
inline std::string mappings_to_jsonl(const std::vector<RankedMapping>& mappings) {
  std::string out;
  for (const auto& m : mappings) {
    nlohmann::ordered_json j;
    j["colID"] = m.column_id;
    j["propID"] = m.ids();
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Sidecar with scores: {"colID", "propID", "scores"}; unscored entries are null.
inline std::string scores_to_jsonl(const std::vector<RankedMapping>& mappings) {
  std::string out;
  for (const auto& m : mappings) {
    nlohmann::ordered_json j;
    j["colID"] = m.column_id;
    j["propID"] = m.ids();
    auto scores = nlohmann::ordered_json::array();
    for (const auto& r : m.ranked) {
      if (r.score) {
        scores.push_back(*r.score);
      } else {
        scores.push_back(nullptr);
      }
    }
    j["scores"] = scores;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Reads a mappings file; "propID" may be a single id or a list.
inline std::vector<RankedMapping> load_mappings(const std::filesystem::path& path) {
  std::vector<RankedMapping> out;
  std::vector<std::pair<std::size_t, std::string>> errors;
  detail::for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    try {
      const auto j = detail::parse_object(line);
      RankedMapping m;
      m.column_id = detail::require_string(j, "colID");
      auto it = j.find("propID");
      if (it == j.end()) throw Error(Errc::MissingField, "propID");
      if (it->is_string()) {
        m.ranked.push_back({it->get<std::string>(), std::nullopt});
      } else if (it->is_array()) {
        for (const auto& v : *it) {
          if (!v.is_string()) throw Error(Errc::MalformedJson, "propID entries must be strings");
          m.ranked.push_back({v.get<std::string>(), std::nullopt});
        }
      } else {
        throw Error(Errc::MalformedJson, "propID must be a string or a list");
      }
      out.push_back(std::move(m));
    } catch (const Error& e) {
      errors.emplace_back(lineno, e.what());
    }
  });
  if (!errors.empty()) throw Error(Errc::LineErrors, detail::join_errors(path, errors));
  return out;
}

}  // namespace cva
