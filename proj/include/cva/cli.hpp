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

// `cva` command-line surface: ingest | shard | rank | llm-match | eval |
// sweep | mock-llm. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/evaluator.hpp"
#include "cva/llm_matcher.hpp"
#include "cva/manifest.hpp"
#include "cva/mock_llm.hpp"
#include "cva/partitioner.hpp"
#include "cva/ranker.hpp"
#include "cva/remote_embedding.hpp"

namespace cva::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

struct BackendFlags {
  std::string backend = "local";
  std::string embed_url;
  std::string embed_model = "default";
  std::size_t local_dim = LocalHashBackend::kDefaultDim;

  void attach(CLI::App* cmd) {
    cmd->add_option("--backend", backend, "Embedding backend")->check(CLI::IsMember({"local", "remote"}));
    cmd->add_option("--embed-url", embed_url, "Embedding service base URL")->envname("CVA_EMBED_URL");
    cmd->add_option("--embed-model", embed_model, "Model name sent to the embedding service");
  }

  std::unique_ptr<EmbeddingBackend> make() const {
    if (backend == "local") return std::make_unique<LocalHashBackend>(local_dim);
    RemoteEmbeddingConfig rc;
    rc.base_url = embed_url;
    rc.model = embed_model;
    rc.apply_env();
    if (rc.base_url.empty()) throw Error(Errc::InvalidFlag, "--embed-url (or CVA_EMBED_URL) is required for the remote backend");
    return std::make_unique<RemoteEmbeddingBackend>(rc);
  }

  nlohmann::ordered_json snapshot() const {
    return {{"backend", backend}, {"embed_url", embed_url}, {"embed_model", embed_model}};
  }
};

struct LlmFlags {
  std::string url;
  long long timeout_ms = 120000;
  int max_retries = 3;
  long long backoff_ms = 500;
  int max_in_flight = 1;
  long long min_interval_ms = 0;
  std::size_t context_budget = std::size_t{8} << 20;
  std::size_t batch_size = 25;

  void attach(CLI::App* cmd) {
    cmd->add_option("--llm-url", url, "Chat-completions base URL")->envname("CVA_LLM_URL");
    cmd->add_option("--batch-size", batch_size, "Columns per request")->check(CLI::PositiveNumber);
    cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
    cmd->add_option("--max-retries", max_retries, "Retries on timeout, 429 and 5xx")->check(CLI::NonNegativeNumber);
    cmd->add_option("--backoff-ms", backoff_ms, "Initial retry backoff")->check(CLI::NonNegativeNumber);
    cmd->add_option("--max-in-flight", max_in_flight, "Concurrent requests per repetition")->check(CLI::PositiveNumber);
    cmd->add_option("--min-interval-ms", min_interval_ms, "Minimum spacing between requests")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--context-budget", context_budget, "Maximum inlined glossary size in bytes");
  }

  LlmRunConfig run_config() const {
    LlmRunConfig c;
    c.batch_size = batch_size;
    c.max_retries = max_retries;
    c.timeout = std::chrono::milliseconds(timeout_ms);
    c.initial_backoff = std::chrono::milliseconds(backoff_ms);
    c.max_in_flight = max_in_flight;
    c.min_request_interval = std::chrono::milliseconds(min_interval_ms);
    c.context_budget_bytes = context_budget;
    return c;
  }

  std::unique_ptr<ChatClient> make_client() const {
    HttpChatConfig hc;
    hc.base_url = url;
    hc.apply_env();
    if (hc.base_url.empty()) throw Error(Errc::InvalidFlag, "--llm-url (or CVA_LLM_URL) is required");
    hc.post.timeout = std::chrono::milliseconds(timeout_ms);
    hc.post.retry.max_retries = max_retries;
    hc.post.retry.initial_backoff = std::chrono::milliseconds(backoff_ms);
    hc.min_request_interval = std::chrono::milliseconds(min_interval_ms);
    return std::make_unique<HttpChatClient>(hc);
  }

  nlohmann::ordered_json snapshot() const {
    return {{"llm_url", url},           {"batch_size", batch_size},       {"timeout_ms", timeout_ms},
            {"max_retries", max_retries}, {"backoff_ms", backoff_ms},     {"max_in_flight", max_in_flight},
            {"min_interval_ms", min_interval_ms}, {"context_budget", context_budget}};
  }
};

inline void print_warnings(std::ostream& err, const Warnings& warnings) {
  for (const auto& w : warnings) err << "warning: " << w << "\n";
}

/// Fills options from a TOML-style file for every option that was not given
/// on the command line or through its environment variable.
inline void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(Errc::Io, "config file " + path + " not found");
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    std::string name = item.name;
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    auto* opt = cmd->get_option_no_throw("--" + name);
    if (!opt) throw Error(Errc::InvalidFlag, "unknown key '" + item.name + "' in " + path);
    if (opt->count() == 0) {
      opt->add_result(item.inputs);
      opt->run_callback();
    }
  }
}

inline std::atomic<bool> g_stop_requested{false};
extern "C" inline void on_stop_signal(int) { g_stop_requested = true; }

}  // namespace detail

inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Column Vocabulary Association toolkit", "cva"};
  app.require_subcommand(1);
  std::uint64_t seed = 17;
  app.add_option("--seed", seed, "Seed for k-means and the mock endpoint");
  app.set_version_flag("--version", kToolVersion);

  std::vector<std::string> args(argv, argv + argc);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate metadata/glossary/ground-truth JSONL into a corpus directory");
  std::string metadata_path, glossary_path, gt_path, ingest_out;
  ingest->add_option("--metadata", metadata_path, "Table metadata JSONL")->required();
  ingest->add_option("--glossary", glossary_path, "Glossary JSONL")->required();
  ingest->add_option("--ground-truth", gt_path, "Ground truth JSONL");
  ingest->add_option("--out", ingest_out, "Corpus directory")->required();

  // shard
  auto* shard = app.add_subcommand("shard", "Split the glossary into topic shards");
  std::string shard_corpus, shard_out;
  std::size_t n_shards = 75;
  detail::BackendFlags shard_backend;
  shard->add_option("--corpus", shard_corpus, "Corpus directory")->required();
  shard->add_option("--n", n_shards, "Number of shards")->check(CLI::PositiveNumber);
  shard->add_option("--seed", seed, "k-means seed");
  shard->add_option("--out", shard_out, "Shard directory")->required();
  shard_backend.attach(shard);

  // rank
  auto* rank = app.add_subcommand("rank", "Embedding-similarity top-k ranking");
  std::string rank_corpus_dir, rank_out, meta_strategy = "label", gloss_strategy = "label", cache_dir;
  std::size_t k = kDefaultTopK;
  detail::BackendFlags rank_backend;
  rank->add_option("--corpus", rank_corpus_dir, "Corpus directory")->required();
  rank->add_option("--meta-strategy", meta_strategy, "label | label-concat-table | label-sum-table");
  rank->add_option("--gloss-strategy", gloss_strategy, "label | label-concat-desc | desc | desc-sum-label");
  rank->add_option("--k", k, "Entries per column")->check(CLI::PositiveNumber);
  rank->add_option("--out", rank_out, "Output mappings JSONL")->required();
  rank->add_option("--cache-dir", cache_dir, "Embedding cache directory");
  rank_backend.attach(rank);

  // llm-match
  auto* match = app.add_subcommand("llm-match", "Zero-shot matching through a chat-completions endpoint");
  std::string match_corpus, match_out, model;
  double temperature = 0.5;
  int repetitions = 3, round = 1;
  std::size_t match_shards = 0;
  detail::LlmFlags match_llm;
  detail::BackendFlags match_backend;
  match->add_option("--corpus", match_corpus, "Corpus directory")->required();
  match->add_option("--model", model, "Model name")->required();
  match->add_option("--temperature", temperature, "Sampling temperature")->check(CLI::Range(0.0, 2.0));
  match->add_option("--repetitions", repetitions, "Independent passes")->check(CLI::PositiveNumber);
  match->add_option("--round", round, "Prompt wording: 1 (DBpedia) or 2 (custom vocabulary)")
      ->check(CLI::IsMember({1, 2}));
  match->add_option("--shards", match_shards, "Shard the glossary into N topic shards (0: off)");
  match->add_option("--seed", seed, "Shard seed");
  match->add_option("--out", match_out, "Run directory")->required();
  match_llm.attach(match);
  match_backend.attach(match);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a mappings file with hit@1 / hit@5");
  std::string eval_mappings, eval_gt;
  bool eval_json = false;
  eval->add_option("--mappings", eval_mappings, "Mappings JSONL")->required();
  eval->add_option("--ground-truth", eval_gt, "Ground truth JSONL")->required();
  eval->add_flag("--json", eval_json, "Print a JSON object");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Model x temperature grid (and optionally embedding strategies)");
  std::string sweep_config, sweep_corpus, sweep_gt, sweep_out;
  std::vector<std::string> models;
  std::vector<double> temperatures;
  int sweep_reps = 3, sweep_round = 1;
  bool sweep_strategies = false;
  detail::LlmFlags sweep_llm;
  detail::BackendFlags sweep_backend;
  sw->add_option("--config", sweep_config, "TOML-style file; flags and environment take precedence");
  sw->add_option("--corpus", sweep_corpus, "Corpus directory");
  sw->add_option("--ground-truth", sweep_gt, "Ground truth JSONL");
  sw->add_option("--models", models, "Models to sweep");
  sw->add_option("--temperatures", temperatures, "Temperatures to sweep");
  sw->add_option("--repetitions", sweep_reps, "Repetitions per cell")->check(CLI::PositiveNumber);
  sw->add_option("--round", sweep_round, "Prompt wording round")->check(CLI::IsMember({1, 2}));
  sw->add_flag("--strategies", sweep_strategies, "Also sweep the embedding combinations");
  sw->add_option("--out", sweep_out, "Report directory");
  sweep_llm.attach(sw);
  sweep_backend.attach(sw);

  // mock-llm
  auto* mock = app.add_subcommand("mock-llm", "Serve the scripted chat-completions endpoint");
  int mock_port = 8089;
  std::string behavior = "echo-valid-mapping";
  mock->add_option("--port", mock_port, "Port to bind")->check(CLI::Range(0, 65535));
  mock->add_option("--behavior", behavior,
                   "echo-valid-mapping | inject-hallucinations | fail-rate(p) | timeout[(ms)] | rate-limit(n), "
                   "or a JSON script path");
  mock->add_option("--seed", seed, "Seed for scripted failures");

  try {
    std::vector<const char*> raw(argv, argv + argc);
    app.parse(argc, const_cast<char**>(raw.data()));
    if (!sweep_config.empty() && sw->parsed()) detail::apply_config_file(sw, sweep_config);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const bool unknown_command = app.get_subcommands().empty() && e.get_name() == "ExtrasError";
    err << "error [" << to_string(unknown_command ? Errc::UnknownCommand : Errc::InvalidFlag) << "]: " << e.what()
        << "\n\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitUsage;
  }

  RunManifest manifest;
  manifest.argv = args;

  try {
    if (ingest->parsed()) {
      manifest.command = "ingest";
      auto corpus = load_corpus(metadata_path, glossary_path);
      detail::print_warnings(err, corpus.warnings);
      const std::filesystem::path dir(ingest_out);
      write_file(dir / CorpusDir::kMetadata, to_jsonl(corpus.columns));
      write_file(dir / CorpusDir::kGlossary, to_jsonl(corpus.glossary));
      manifest.add_input(metadata_path);
      manifest.add_input(glossary_path);
      manifest.outputs = {(dir / CorpusDir::kMetadata).string(), (dir / CorpusDir::kGlossary).string()};
      std::size_t n_truth = 0;
      if (!gt_path.empty()) {
        auto gt = load_ground_truth(gt_path);
        detail::print_warnings(err, restrict_to_corpus(gt, corpus));
        write_file(dir / CorpusDir::kGroundTruth, to_jsonl(gt));
        manifest.add_input(gt_path);
        manifest.outputs.push_back((dir / CorpusDir::kGroundTruth).string());
        n_truth = gt.size();
      }
      manifest.config = {{"n_columns", corpus.n_columns()}, {"n_glossary", corpus.n_glossary()},
                         {"n_ground_truth", n_truth}};
      manifest.append_to(dir);
      out << "columns=" << corpus.n_columns() << " glossary=" << corpus.n_glossary();
      if (!gt_path.empty()) out << " ground_truth=" << n_truth;
      out << "\n";
      return kExitOk;
    }

    if (shard->parsed()) {
      manifest.command = "shard";
      const std::filesystem::path cdir(shard_corpus);
      auto corpus = load_corpus_dir(cdir);
      auto backend = shard_backend.make();
      auto plan = partition_glossary(corpus.glossary, n_shards, *backend, seed);
      plan.routing = route_metadata(corpus.columns, plan, *backend);
      auto ex = export_shards(plan, corpus, shard_out);
      manifest.add_input(cdir / CorpusDir::kMetadata);
      manifest.add_input(cdir / CorpusDir::kGlossary);
      manifest.config = shard_backend.snapshot();
      manifest.config["n_shards"] = n_shards;
      manifest.config["seed"] = seed;
      for (const auto& p : ex.glossary_files) manifest.outputs.push_back(p.string());
      for (const auto& p : ex.metadata_files) manifest.outputs.push_back(p.string());
      manifest.outputs.push_back(ex.manifest.string());
      manifest.append_to(shard_out);
      out << "shards=" << plan.n_shards << " iterations=" << plan.iterations << "\n";
      return kExitOk;
    }

    if (rank->parsed()) {
      manifest.command = "rank";
      const auto ms = parse_metadata_strategy(meta_strategy);
      const auto gs = parse_glossary_strategy(gloss_strategy);
      const std::filesystem::path cdir(rank_corpus_dir);
      auto corpus = load_corpus_dir(cdir);
      auto backend = rank_backend.make();
      auto mappings = rank_corpus(corpus, ms, gs, *backend, k, cache_dir);
      const std::filesystem::path mpath(rank_out);
      auto spath = mpath;
      spath.replace_extension(".scores.jsonl");
      write_file(mpath, mappings_to_jsonl(mappings));
      write_file(spath, scores_to_jsonl(mappings));
      manifest.add_input(cdir / CorpusDir::kMetadata);
      manifest.add_input(cdir / CorpusDir::kGlossary);
      manifest.config = rank_backend.snapshot();
      manifest.config["meta_strategy"] = meta_strategy;
      manifest.config["gloss_strategy"] = gloss_strategy;
      manifest.config["k"] = k;
      manifest.outputs = {mpath.string(), spath.string()};
      manifest.append_to(mpath.has_parent_path() ? mpath.parent_path() : std::filesystem::path("."));
      out << "ranked " << mappings.size() << " columns -> " << mpath.string() << "\n";
      return kExitOk;
    }

    if (match->parsed()) {
      manifest.command = "llm-match";
      const std::filesystem::path cdir(match_corpus);
      auto corpus = load_corpus_dir(cdir);
      LlmRunConfig rc = match_llm.run_config();
      rc.model = model;
      rc.temperature = temperature;
      rc.repetitions = repetitions;
      rc.validate();
      auto client = match_llm.make_client();
      MatchingOptions opts;
      opts.archive_root = match_out;
      std::optional<ShardAssignment> assignment;
      if (match_shards > 0) {
        auto backend = match_backend.make();
        auto plan = partition_glossary(corpus.glossary, match_shards, *backend, seed);
        plan.routing = route_metadata(corpus.columns, plan, *backend);
        assignment = to_assignment(plan, corpus);
        opts.shards = &*assignment;
      }
      auto outcomes = run_matching(corpus, rc, parse_round(round), *client, opts);
      std::string summary;
      for (std::size_t r = 0; r < outcomes.size(); ++r) {
        const auto dir = archive_dir(match_out, rc, static_cast<int>(r));
        write_file(dir / "mappings.jsonl", mappings_to_jsonl(outcomes[r].mappings));
        write_file(dir / "outcome.json", outcome_to_json(outcomes[r]));
        manifest.outputs.push_back((dir / "mappings.jsonl").string());
        nlohmann::ordered_json row = nlohmann::ordered_json::parse(outcome_to_json(outcomes[r]));
        row["repetition"] = r;
        summary += row.dump() + "\n";
        out << "repetition " << r << ": "
            << (outcomes[r].completed() ? "completed, " + std::to_string(outcomes[r].mappings.size()) + " mapped, " +
                                              std::to_string(outcomes[r].unanswered.size()) + " unanswered"
                                        : "failed (" + outcomes[r].failure_reason + ")")
            << "\n";
      }
      write_file(std::filesystem::path(match_out) / "outcomes.jsonl", summary);
      manifest.add_input(cdir / CorpusDir::kMetadata);
      manifest.add_input(cdir / CorpusDir::kGlossary);
      manifest.config = match_llm.snapshot();
      manifest.config["model"] = model;
      manifest.config["temperature"] = temperature;
      manifest.config["repetitions"] = repetitions;
      manifest.config["round"] = round;
      manifest.config["shards"] = match_shards;
      manifest.config["seed"] = seed;
      manifest.outputs.push_back((std::filesystem::path(match_out) / "outcomes.jsonl").string());
      manifest.append_to(match_out);
      return kExitOk;
    }

    if (eval->parsed()) {
      auto mappings = load_mappings(eval_mappings);
      auto gt = load_ground_truth(eval_gt);
      if (gt.empty()) throw Error(Errc::InvalidArgument, "ground truth is empty");
      auto r = evaluate_run(mappings, gt);
      detail::print_warnings(err, r.diagnostics);
      if (eval_json) {
        nlohmann::ordered_json j;
        j["h1"] = r.h1;
        j["h5"] = r.h5;
        j["n_columns"] = r.n_columns;
        j["n_answered"] = r.n_answered;
        out << j.dump() << "\n";
      } else {
        out << "hit@1=" << r.h1 << " hit@5=" << r.h5 << " answered=" << r.n_answered << "/" << r.n_columns << "\n";
      }
      return kExitOk;
    }

    if (sw->parsed()) {
      manifest.command = "sweep";
      if (sweep_corpus.empty()) throw Error(Errc::InvalidFlag, "--corpus is required");
      if (sweep_gt.empty()) throw Error(Errc::InvalidFlag, "--ground-truth is required");
      if (sweep_out.empty()) throw Error(Errc::InvalidFlag, "--out is required");
      if (models.empty() && !sweep_strategies) throw Error(Errc::InvalidFlag, "--models or --strategies is required");
      const std::filesystem::path cdir(sweep_corpus), odir(sweep_out);
      auto corpus = load_corpus_dir(cdir);
      auto gt = load_ground_truth(sweep_gt);
      detail::print_warnings(err, restrict_to_corpus(gt, corpus));
      if (gt.empty()) throw Error(Errc::InvalidArgument, "ground truth is empty");
      manifest.add_input(cdir / CorpusDir::kMetadata);
      manifest.add_input(cdir / CorpusDir::kGlossary);
      manifest.add_input(sweep_gt);
      if (!sweep_config.empty()) manifest.add_input(sweep_config);
      manifest.config = sweep_llm.snapshot();
      manifest.config["models"] = models;
      manifest.config["temperatures"] = temperatures;
      manifest.config["repetitions"] = sweep_reps;
      manifest.config["round"] = sweep_round;
      manifest.config["seed"] = seed;

      if (!models.empty()) {
        if (temperatures.empty()) throw Error(Errc::InvalidFlag, "--temperatures is required with --models");
        SweepConfig sc;
        sc.models = models;
        sc.temperatures = temperatures;
        sc.repetitions = sweep_reps;
        sc.round = parse_round(sweep_round);
        sc.base = sweep_llm.run_config();
        auto client = sweep_llm.make_client();
        MatchingOptions opts;
        opts.archive_root = odir;
        auto report = sweep(corpus, gt, sc, *client, opts);
        const auto table = render_sweep_table(report);
        write_file(odir / "report.txt", table);
        write_file(odir / "report.jsonl", sweep_to_jsonl(report));
        manifest.outputs.push_back((odir / "report.txt").string());
        manifest.outputs.push_back((odir / "report.jsonl").string());
        out << table;
        if (report.best) {
          const auto& b = report.cells[*report.best];
          out << "best: " << b.model << " @ " << format_temperature(b.temperature) << "\n";
        }
      }
      if (sweep_strategies) {
        auto backend = sweep_backend.make();
        auto rows = strategy_sweep(corpus, gt, *backend, evaluated_combinations());
        const auto table = render_strategy_table(rows);
        write_file(odir / "strategies.txt", table);
        write_file(odir / "strategies.jsonl", strategies_to_jsonl(rows));
        manifest.outputs.push_back((odir / "strategies.txt").string());
        manifest.outputs.push_back((odir / "strategies.jsonl").string());
        manifest.config["embedding"] = sweep_backend.snapshot();
        out << table;
      }
      manifest.append_to(odir);
      return kExitOk;
    }

    if (mock->parsed()) {
      MockLlmServer server(load_mock_script(behavior, seed));
      const int port = server.start(mock_port);
      out << "mock-llm listening on http://127.0.0.1:" << port << std::endl;
      detail::g_stop_requested = false;
      std::signal(SIGINT, detail::on_stop_signal);
      std::signal(SIGTERM, detail::on_stop_signal);
      while (!detail::g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == Errc::InvalidFlag || e.code() == Errc::InvalidArgument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    err << "error [Io]: " << e.what() << "\n";
    return kExitFailure;
  }
  err << "error [UnknownCommand]\n" << app.help();
  return kExitUsage;
}

}  // namespace cva::cli
