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

// hit@1 / hit@5 scoring, repetition aggregation, model x temperature sweeps
// and embedding-strategy sweeps.

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/llm_matcher.hpp"
#include "cva/ranker.hpp"

namespace cva {

/// 1 when any of the first min(k, size) ids is in `truth`.
inline int hit_at_k(const std::vector<std::string>& ranked, const std::set<std::string>& truth, std::size_t k) {
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be >= 1");
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (truth.count(ranked[i])) return 1;
  }
  return 0;
}

struct EvalResult {
  double h1 = 0.0;
  double h5 = 0.0;
  std::size_t n_columns = 0;
  std::size_t n_answered = 0;
  std::size_t hits1 = 0;
  std::size_t hits5 = 0;
  Warnings diagnostics;
};

/// Averages over every ground-truth column; unanswered columns count as misses.
inline EvalResult evaluate_run(const std::vector<RankedMapping>& mappings, const GroundTruth& ground_truth) {
  EvalResult r;
  r.n_columns = ground_truth.size();
  std::unordered_map<std::string, const RankedMapping*> by_column;
  for (const auto& m : mappings) {
    if (!by_column.emplace(m.column_id, &m).second) {
      r.diagnostics.push_back("duplicate prediction for column " + m.column_id + " ignored");
    } else if (!ground_truth.truth.count(m.column_id)) {
      r.diagnostics.push_back("prediction for column " + m.column_id + " has no ground truth");
    }
  }
  for (const auto& [col, truth] : ground_truth.truth) {
    auto it = by_column.find(col);
    if (it == by_column.end() || it->second->ranked.empty()) continue;
    ++r.n_answered;
    const auto ids = it->second->ids();
    r.hits1 += static_cast<std::size_t>(hit_at_k(ids, truth, 1));
    r.hits5 += static_cast<std::size_t>(hit_at_k(ids, truth, 5));
  }
  if (r.n_columns > 0) {
    r.h1 = static_cast<double>(r.hits1) / static_cast<double>(r.n_columns);
    r.h5 = static_cast<double>(r.hits5) / static_cast<double>(r.n_columns);
  }
  return r;
}

struct RepetitionScore {
  bool completed = false;
  std::optional<EvalResult> result;
  std::string reason;
};

struct CellAggregate {
  std::string model;
  double temperature = 0.0;
  std::optional<double> mean_h1;  // unset when every repetition failed
  std::optional<double> mean_h5;
  std::size_t n_success = 0;
  std::size_t n_failed = 0;
  std::vector<RepetitionScore> runs;

  bool failed() const { return n_success == 0; }
};

/// Means over completed repetitions; the cell is Failed only if none completed.
inline CellAggregate aggregate_repetitions(const std::vector<RunOutcome>& outcomes, const GroundTruth& ground_truth,
                                           std::string model = {}, double temperature = 0.0) {
  if (outcomes.empty()) throw Error(Errc::InvalidArgument, "no outcomes to aggregate");
  CellAggregate cell;
  cell.model = std::move(model);
  cell.temperature = temperature;
  double s1 = 0.0, s5 = 0.0;
  for (const auto& o : outcomes) {
    RepetitionScore rs;
    rs.completed = o.completed();
    if (o.completed()) {
      auto r = evaluate_run(o.mappings, ground_truth);
      s1 += r.h1;
      s5 += r.h5;
      rs.result = std::move(r);
      ++cell.n_success;
    } else {
      rs.reason = o.failure_reason;
      ++cell.n_failed;
    }
    cell.runs.push_back(std::move(rs));
  }
  if (cell.n_success > 0) {
    cell.mean_h1 = s1 / static_cast<double>(cell.n_success);
    cell.mean_h5 = s5 / static_cast<double>(cell.n_success);
  }
  return cell;
}

struct SweepConfig {
  std::vector<std::string> models;
  std::vector<double> temperatures;
  int repetitions = 3;
  Round round = Round::One;
  LlmRunConfig base;  // model and temperature are overwritten per cell
};

struct SweepReport {
  std::vector<std::string> models;
  std::vector<double> temperatures;
  std::vector<CellAggregate> cells;  // model-major
  std::optional<std::size_t> best;

  const CellAggregate& cell(std::size_t model, std::size_t temperature) const {
    return cells.at(model * temperatures.size() + temperature);
  }
};

/// Best cell by mean hit@5, then mean hit@1; earlier grid position wins ties.
inline std::optional<std::size_t> select_best(const std::vector<CellAggregate>& cells) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].failed()) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& a = cells[i];
    const auto& b = cells[*best];
    if (*a.mean_h5 > *b.mean_h5 || (*a.mean_h5 == *b.mean_h5 && *a.mean_h1 > *b.mean_h1)) best = i;
  }
  return best;
}

/// Runs every (model, temperature) cell sequentially and aggregates it.
inline SweepReport sweep(const Corpus& corpus, const GroundTruth& ground_truth, const SweepConfig& config,
                         ChatClient& client, const MatchingOptions& options = {}) {
  if (config.models.empty() || config.temperatures.empty()) {
    throw Error(Errc::InvalidArgument, "sweep needs at least one model and one temperature");
  }
  SweepReport report;
  report.models = config.models;
  report.temperatures = config.temperatures;
  for (const auto& model : config.models) {
    for (double t : config.temperatures) {
      LlmRunConfig rc = config.base;
      rc.model = model;
      rc.temperature = t;
      rc.repetitions = config.repetitions;
      std::vector<RunOutcome> outcomes;
      try {
        outcomes = run_matching(corpus, rc, config.round, client, options);
      } catch (const Error& e) {
        outcomes.assign(static_cast<std::size_t>(std::max(1, config.repetitions)), RunOutcome::failed(e.what()));
      }
      report.cells.push_back(aggregate_repetitions(outcomes, ground_truth, model, t));
    }
  }
  report.best = select_best(report.cells);
  return report;
}

namespace detail {

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

/// One row per model, an (h1, h5) column pair per temperature; cells with no
/// completed repetition show "X". The best cell is starred.
inline std::string render_sweep_table(const SweepReport& report) {
  std::size_t name_w = 10;
  for (const auto& m : report.models) name_w = std::max(name_w, m.size() + 2);
  std::string out = detail::pad("model", name_w);
  for (double t : report.temperatures) out += "| " + detail::pad(format_temperature(t), 13);
  out += "\n" + detail::pad("", name_w);
  for (std::size_t i = 0; i < report.temperatures.size(); ++i) out += "| " + detail::pad("h1", 6) + detail::pad("h5", 7);
  out += "\n";
  for (std::size_t m = 0; m < report.models.size(); ++m) {
    out += detail::pad(report.models[m], name_w);
    for (std::size_t t = 0; t < report.temperatures.size(); ++t) {
      const auto& c = report.cell(m, t);
      const bool best = report.best && *report.best == m * report.temperatures.size() + t;
      if (c.failed()) {
        out += "| " + detail::pad("X", 6) + detail::pad("X", 7);
      } else {
        out += "| " + detail::pad(detail::fixed2(*c.mean_h1), 6) +
               detail::pad(detail::fixed2(*c.mean_h5) + (best ? "*" : ""), 7);
      }
    }
    out += "\n";
  }
  out += "\nrepetitions:\n";
  for (const auto& c : report.cells) {
    out += "  " + c.model + " @ " + format_temperature(c.temperature) + ": " + std::to_string(c.n_success) +
           " completed, " + std::to_string(c.n_failed) + " failed\n";
    for (std::size_t r = 0; r < c.runs.size(); ++r) {
      const auto& run = c.runs[r];
      out += "    #" + std::to_string(r) + " ";
      if (run.completed) {
        out += "h1=" + detail::fixed2(run.result->h1) + " h5=" + detail::fixed2(run.result->h5) +
               " answered=" + std::to_string(run.result->n_answered) + "/" + std::to_string(run.result->n_columns);
      } else {
        out += "failed: " + run.reason;
      }
      out += "\n";
    }
  }
  return out;
}

inline nlohmann::ordered_json cell_to_json(const CellAggregate& c) {
  nlohmann::ordered_json j;
  j["model"] = c.model;
  j["temperature"] = c.temperature;
  j["h1"] = c.mean_h1 ? nlohmann::ordered_json(*c.mean_h1) : nlohmann::ordered_json(nullptr);
  j["h5"] = c.mean_h5 ? nlohmann::ordered_json(*c.mean_h5) : nlohmann::ordered_json(nullptr);
  j["n_success"] = c.n_success;
  j["n_failed"] = c.n_failed;
  j["status"] = c.failed() ? "X" : "ok";
  auto runs = nlohmann::ordered_json::array();
  for (const auto& r : c.runs) {
    nlohmann::ordered_json rj;
    rj["status"] = r.completed ? "completed" : "failed";
    if (r.completed) {
      rj["h1"] = r.result->h1;
      rj["h5"] = r.result->h5;
      rj["n_answered"] = r.result->n_answered;
    } else {
      rj["reason"] = r.reason;
    }
    runs.push_back(rj);
  }
  j["runs"] = runs;
  return j;
}

inline std::string sweep_to_jsonl(const SweepReport& report) {
  std::string out;
  for (const auto& c : report.cells) out += cell_to_json(c).dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Embedding strategy sweep

struct StrategyCombination {
  MetadataStrategy metadata;
  GlossaryStrategy glossary;
};

/// The nine metadata/glossary combinations that were evaluated, in table order.
inline std::vector<StrategyCombination> evaluated_combinations() {
  using M = MetadataStrategy;
  using G = GlossaryStrategy;
  return {
      {M::Label, G::Label},
      {M::Label, G::LabelConcatDesc},
      {M::LabelConcatTableName, G::Label},
      {M::LabelConcatTableName, G::LabelConcatDesc},
      {M::Label, G::Desc},
      {M::LabelConcatTableName, G::Desc},
      {M::LabelSumTableName, G::Desc},
      {M::LabelSumTableName, G::DescSumLabel},
      {M::LabelSumTableName, G::Label},
  };
}

struct StrategyRow {
  StrategyCombination combination;
  EvalResult result;
};

inline std::vector<StrategyRow> strategy_sweep(const Corpus& corpus, const GroundTruth& ground_truth,
                                               EmbeddingBackend& backend,
                                               const std::vector<StrategyCombination>& combinations,
                                               const std::filesystem::path& cache_dir = {}) {
  std::vector<StrategyRow> rows;
  for (const auto& combo : combinations) {
    const auto mappings = rank_corpus(corpus, combo.metadata, combo.glossary, backend, kDefaultTopK, cache_dir);
    rows.push_back({combo, evaluate_run(mappings, ground_truth)});
  }
  return rows;
}

inline std::string render_strategy_table(const std::vector<StrategyRow>& rows) {
  double best1 = -1.0, best5 = -1.0;
  for (const auto& r : rows) {
    best1 = std::max(best1, r.result.h1);
    best5 = std::max(best5, r.result.h5);
  }
  std::string out = detail::pad("metadata embeddings", 38) + detail::pad("glossary embeddings", 32) + "h1     h5\n";
  for (const auto& r : rows) {
    out += detail::pad(std::string(describe(r.combination.metadata)), 38);
    out += detail::pad(std::string(describe(r.combination.glossary)), 32);
    out += detail::pad(detail::fixed2(r.result.h1) + (r.result.h1 == best1 ? "*" : ""), 7);
    out += detail::fixed2(r.result.h5) + (r.result.h5 == best5 ? "*" : "");
    out += "\n";
  }
  return out;
}

inline std::string strategies_to_jsonl(const std::vector<StrategyRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["metadata_strategy"] = to_string(r.combination.metadata);
    j["glossary_strategy"] = to_string(r.combination.glossary);
    j["h1"] = r.result.h1;
    j["h5"] = r.result.h5;
    j["n_columns"] = r.result.n_columns;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace cva
