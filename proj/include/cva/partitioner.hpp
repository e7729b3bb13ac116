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

// Topic shards for large glossaries: seeded k-means over glossary embeddings,
// nearest-centroid routing of columns, and shard file export.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/llm_matcher.hpp"
#include "cva/ranker.hpp"

namespace cva {

inline constexpr int kKMeansMaxIterations = 100;
inline constexpr GlossaryStrategy kShardGlossaryStrategy = GlossaryStrategy::LabelConcatDesc;
inline constexpr MetadataStrategy kShardRoutingStrategy = MetadataStrategy::LabelSumTableName;

struct ShardPlan {
  std::size_t n_shards = 0;
  std::uint64_t seed = 0;
  std::string backend;
  std::vector<std::string> glossary_ids;     // glossary order
  std::vector<std::size_t> glossary_shard;   // parallel to glossary_ids
  std::vector<EmbeddingVector> centroids;
  std::map<std::string, std::size_t> routing;  // column id -> shard
  int iterations = 0;

  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(n_shards);
    for (std::size_t i = 0; i < glossary_shard.size(); ++i) out[glossary_shard[i]].push_back(i);
    return out;
  }

  bool operator==(const ShardPlan&) const = default;
};

namespace detail {

/// Sparse view of a unit-normalized point; trigram vectors have few nonzeros.
struct SparsePoint {
  std::vector<std::uint32_t> index;
  std::vector<double> value;
  double sq_norm = 0.0;
};

inline SparsePoint to_sparse_unit(const EmbeddingVector& v) {
  SparsePoint p;
  const double n = v.norm();
  for (std::size_t i = 0; i < v.dim(); ++i) {
    if (v[i] == 0.0) continue;
    const double x = v[i] / n;
    p.index.push_back(static_cast<std::uint32_t>(i));
    p.value.push_back(x);
    p.sq_norm += x * x;
  }
  return p;
}

inline double sq_distance(const SparsePoint& p, const std::vector<double>& c, double c_sq_norm) {
  double dot = 0.0;
  for (std::size_t k = 0; k < p.index.size(); ++k) dot += p.value[k] * c[p.index[k]];
  return std::max(0.0, p.sq_norm - 2.0 * dot + c_sq_norm);
}

inline double sq_norm(const std::vector<double>& c) {
  double s = 0.0;
  for (double x : c) s += x * x;
  return s;
}

/// Uniform double in [0, 1) built from raw engine output, so the sequence is
/// identical across standard library implementations.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::vector<double> dense_of(const SparsePoint& p, std::size_t dim) {
  std::vector<double> d(dim, 0.0);
  for (std::size_t k = 0; k < p.index.size(); ++k) d[p.index[k]] = p.value[k];
  return d;
}

inline std::vector<std::vector<double>> kmeans_plus_plus(const std::vector<SparsePoint>& pts, std::size_t k,
                                                         std::size_t dim, std::mt19937_64& rng) {
  const std::size_t n = pts.size();
  std::vector<std::vector<double>> centers;
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(rng() % n);
  centers.push_back(dense_of(pts[first], dim));
  chosen[first] = true;
  std::vector<double> d2(n);
  double c_sq = sq_norm(centers.back());
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_distance(pts[i], centers.back(), c_sq);

  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i]) total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = unit_uniform(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        acc += d2[i];
        pick = i;
        if (acc > target) break;
      }
    }
    if (pick == n) {
      // Remaining points coincide with existing centers: take the next unchosen one.
      std::size_t skip = static_cast<std::size_t>(rng() % n);
      for (std::size_t off = 0; off < n; ++off) {
        const std::size_t i = (skip + off) % n;
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    centers.push_back(dense_of(pts[pick], dim));
    c_sq = sq_norm(centers.back());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_distance(pts[i], centers.back(), c_sq));
  }
  return centers;
}

inline void recompute_centroids(const std::vector<SparsePoint>& pts, const std::vector<std::size_t>& assign,
                                std::vector<std::vector<double>>& centers) {
  std::vector<std::size_t> counts(centers.size(), 0);
  for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    auto& c = centers[assign[i]];
    ++counts[assign[i]];
    for (std::size_t k = 0; k < pts[i].index.size(); ++k) c[pts[i].index[k]] += pts[i].value[k];
  }
  for (std::size_t j = 0; j < centers.size(); ++j) {
    if (counts[j] == 0) continue;
    for (double& x : centers[j]) x /= static_cast<double>(counts[j]);
  }
}

/// Moves the farthest member of the largest cluster into each empty cluster.
inline bool repair_empty_clusters(const std::vector<SparsePoint>& pts, std::vector<std::size_t>& assign,
                                  std::vector<std::vector<double>>& centers) {
  bool repaired = false;
  for (;;) {
    std::vector<std::size_t> counts(centers.size(), 0);
    for (auto a : assign) ++counts[a];
    const auto empty = std::find(counts.begin(), counts.end(), std::size_t{0});
    if (empty == counts.end()) return repaired;
    const std::size_t e = static_cast<std::size_t>(empty - counts.begin());
    const std::size_t largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    const double c_sq = sq_norm(centers[largest]);
    std::size_t far = pts.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (assign[i] != largest) continue;
      const double d = sq_distance(pts[i], centers[largest], c_sq);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    assign[far] = e;
    centers[e] = dense_of(pts[far], centers[e].size());
    repaired = true;
  }
}

}  // namespace detail

/// Seeded k-means (k-means++ init, at most 100 iterations) over unit-normalized
/// label+description embeddings. Every shard ends up non-empty.
inline ShardPlan partition_glossary(const std::vector<GlossaryEntry>& glossary, std::size_t n_shards,
                                    EmbeddingBackend& backend, std::uint64_t seed) {
  if (n_shards == 0) throw Error(Errc::InvalidArgument, "number of shards must be positive");
  if (n_shards > glossary.size()) {
    throw Error(Errc::TooManyShards, std::to_string(n_shards) + " shards for " + std::to_string(glossary.size()) +
                                         " glossary entries");
  }
  std::vector<std::vector<std::string>> parts;
  parts.reserve(glossary.size());
  for (const auto& g : glossary) parts.push_back(composition_parts(kShardGlossaryStrategy, g));
  EmbeddedCorpus stats;
  const auto vectors = detail::embed_records(parts, backend, nullptr, stats);

  const std::size_t dim = backend.dim();
  std::vector<detail::SparsePoint> pts;
  pts.reserve(vectors.size());
  for (const auto& v : vectors) pts.push_back(v.is_zero() ? detail::SparsePoint{} : detail::to_sparse_unit(v));

  std::mt19937_64 rng(seed);
  auto centers = detail::kmeans_plus_plus(pts, n_shards, dim, rng);
  std::vector<std::size_t> assign(pts.size(), n_shards);
  int iter = 0;
  for (; iter < kKMeansMaxIterations; ++iter) {
    std::vector<double> c_sq(centers.size());
    for (std::size_t j = 0; j < centers.size(); ++j) c_sq[j] = detail::sq_norm(centers[j]);
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < centers.size(); ++j) {
        const double d = detail::sq_distance(pts[i], centers[j], c_sq[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    changed = detail::repair_empty_clusters(pts, assign, centers) || changed;
    detail::recompute_centroids(pts, assign, centers);
    if (!changed) break;
  }
  if (detail::repair_empty_clusters(pts, assign, centers)) detail::recompute_centroids(pts, assign, centers);

  ShardPlan plan;
  plan.n_shards = n_shards;
  plan.seed = seed;
  plan.backend = backend.name();
  plan.iterations = std::min(iter + 1, kKMeansMaxIterations);
  for (const auto& g : glossary) plan.glossary_ids.push_back(g.id);
  plan.glossary_shard = std::move(assign);
  for (auto& c : centers) plan.centroids.emplace_back(std::move(c));
  return plan;
}

/// Sends each column to the shard whose centroid has the highest cosine with
/// its label + table-name (summed) embedding; ties go to the lower index.
inline std::map<std::string, std::size_t> route_metadata(const std::vector<ColumnMetadata>& columns,
                                                         const ShardPlan& plan, EmbeddingBackend& backend) {
  std::map<std::string, std::size_t> routing;
  if (columns.empty()) return routing;
  std::vector<std::vector<std::string>> parts;
  parts.reserve(columns.size());
  for (const auto& c : columns) parts.push_back(composition_parts(kShardRoutingStrategy, c));
  EmbeddedCorpus stats;
  const auto vectors = detail::embed_records(parts, backend, nullptr, stats);
  for (std::size_t i = 0; i < columns.size(); ++i) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < plan.centroids.size(); ++s) {
      const double score = cosine(vectors[i], plan.centroids[s]);
      if (score > best_score) {
        best_score = score;
        best = s;
      }
    }
    routing[columns[i].id] = best;
  }
  return routing;
}

inline ShardAssignment to_assignment(const ShardPlan& plan, const Corpus& corpus) {
  ShardAssignment a;
  a.n_shards = plan.n_shards;
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < plan.glossary_ids.size(); ++i) by_id[plan.glossary_ids[i]] = plan.glossary_shard[i];
  for (const auto& g : corpus.glossary) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw Error(Errc::InvalidArgument, "glossary entry " + g.id + " missing from shard plan");
    a.glossary_shard.push_back(it->second);
  }
  for (const auto& c : corpus.columns) {
    auto it = plan.routing.find(c.id);
    if (it == plan.routing.end()) throw Error(Errc::InvalidArgument, "column " + c.id + " not routed");
    a.column_shard.push_back(it->second);
  }
  return a;
}

inline std::string shard_file_name(const char* kind, std::size_t index, std::size_t n_shards) {
  int width = 3;
  for (std::size_t n = n_shards; n >= 1000; n /= 10) ++width;
  std::string digits = std::to_string(index);
  if (digits.size() < static_cast<std::size_t>(width)) digits.insert(0, width - digits.size(), '0');
  return std::string(kind) + "_" + digits + ".jsonl";
}

struct ShardExport {
  std::vector<std::filesystem::path> glossary_files;
  std::vector<std::filesystem::path> metadata_files;
  std::filesystem::path manifest;
};

/// Writes glossary_NNN.jsonl and metadata_NNN.jsonl per shard (original order
/// within each shard) plus shards.json describing the plan.
inline ShardExport export_shards(const ShardPlan& plan, const Corpus& corpus, const std::filesystem::path& out_dir) {
  const auto assignment = to_assignment(plan, corpus);
  std::vector<std::string> gloss_body(plan.n_shards), meta_body(plan.n_shards);
  std::vector<std::size_t> gloss_count(plan.n_shards, 0), meta_count(plan.n_shards, 0);
  for (std::size_t i = 0; i < corpus.glossary.size(); ++i) {
    const auto s = assignment.glossary_shard[i];
    gloss_body[s] += to_jsonl(corpus.glossary[i]) + "\n";
    ++gloss_count[s];
  }
  for (std::size_t i = 0; i < corpus.columns.size(); ++i) {
    const auto s = assignment.column_shard[i];
    meta_body[s] += to_jsonl(corpus.columns[i]) + "\n";
    ++meta_count[s];
  }

  std::filesystem::create_directories(out_dir);
  ShardExport ex;
  nlohmann::ordered_json shards = nlohmann::ordered_json::array();
  for (std::size_t s = 0; s < plan.n_shards; ++s) {
    const auto g = out_dir / shard_file_name("glossary", s, plan.n_shards);
    const auto m = out_dir / shard_file_name("metadata", s, plan.n_shards);
    write_file(g, gloss_body[s]);
    write_file(m, meta_body[s]);
    ex.glossary_files.push_back(g);
    ex.metadata_files.push_back(m);
    nlohmann::ordered_json row;
    row["shard"] = s;
    row["glossary_file"] = g.filename().string();
    row["metadata_file"] = m.filename().string();
    row["n_glossary"] = gloss_count[s];
    row["n_metadata"] = meta_count[s];
    shards.push_back(row);
  }
  nlohmann::ordered_json manifest;
  manifest["n_shards"] = plan.n_shards;
  manifest["seed"] = plan.seed;
  manifest["backend"] = plan.backend;
  manifest["clustering"] = "k-means++ over encode(label + desc), max 100 iterations";
  manifest["routing"] = "nearest centroid by cosine of encode(label) + encode(table_name) (heuristic)";
  manifest["iterations"] = plan.iterations;
  manifest["shards"] = shards;
  ex.manifest = out_dir / "shards.json";
  write_file(ex.manifest, manifest.dump(2) + "\n");
  return ex;
}

}  // namespace cva
