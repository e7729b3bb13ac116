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

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "cva/cli.hpp"
#include "support/eval_fixture.hpp"
#include "support/fixtures.hpp"

namespace cva {
namespace {

using testing::TempDir;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "cva");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<nlohmann::json> manifest_lines(const std::filesystem::path& dir) {
  std::vector<nlohmann::json> out;
  std::istringstream in(read_file(dir / kManifestFile));
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    unsetenv("CVA_LLM_URL");
    unsetenv("CVA_EMBED_URL");
    corpus_ = testing::self_glossary_corpus(20);
    testing::write_corpus_files(corpus_, dir_ / "meta.jsonl", dir_ / "gloss.jsonl");
    write_file(dir_ / "gt.jsonl", to_jsonl(testing::self_truth(corpus_)));
    const auto r = run({"ingest", "--metadata", (dir_ / "meta.jsonl").string(), "--glossary",
                        (dir_ / "gloss.jsonl").string(), "--ground-truth", (dir_ / "gt.jsonl").string(), "--out",
                        corpus_dir().string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::filesystem::path corpus_dir() const { return dir_ / "corpus"; }

  TempDir dir_;
  Corpus corpus_;
};

TEST(CliUsage, UnknownSubcommandIsUsageError) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(CliUsage, NoSubcommandIsUsageError) { EXPECT_EQ(run({}).code, 2); }

TEST(CliUsage, RankWithoutCorpusIsInvalidFlag) {
  const auto r = run({"rank", "--out", "x.jsonl"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("InvalidFlag"), std::string::npos);
  EXPECT_NE(r.err.find("--corpus"), std::string::npos);
}

TEST(CliUsage, BadStrategyAndTemperature) {
  TempDir dir;
  EXPECT_EQ(run({"rank", "--corpus", dir.path().string(), "--out", "x", "--meta-strategy", "nope"}).code, 2);
  EXPECT_EQ(run({"llm-match", "--corpus", "c", "--model", "m", "--out", "o", "--temperature", "2.5"}).code, 2);
}

TEST(CliUsage, HelpExitsZero) { EXPECT_EQ(run({"--help"}).code, 0); }

TEST_F(CliTest, IngestWritesCorpusAndManifest) {
  const auto c = load_corpus_dir(corpus_dir());
  EXPECT_EQ(c.n_columns(), 20u);
  EXPECT_EQ(c.n_glossary(), 20u);
  const auto m = manifest_lines(corpus_dir());
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0]["command"], "ingest");
  EXPECT_EQ(m[0]["config"]["n_columns"], 20);
  EXPECT_EQ(m[0]["input_hashes"].size(), 3u);
  EXPECT_EQ(m[0]["tool_version"], kToolVersion);
}

TEST_F(CliTest, IngestReportsBadInput) {
  write_file(dir_ / "bad.jsonl", "{\"id\":\"c1\",\"label\":\"x\"}\n");
  const auto r = run({"ingest", "--metadata", (dir_ / "bad.jsonl").string(), "--glossary",
                      (dir_ / "gloss.jsonl").string(), "--out", (dir_ / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("LineErrors"), std::string::npos);
}

TEST_F(CliTest, RankThenEval) {
  const auto out = dir_ / "rank" / "mappings.jsonl";
  auto r = run({"rank", "--corpus", corpus_dir().string(), "--out", out.string(), "--cache-dir",
                (dir_ / "cache").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir_ / "rank" / "mappings.scores.jsonl"));
  EXPECT_EQ(manifest_lines(dir_ / "rank").size(), 1u);

  r = run({"eval", "--mappings", out.string(), "--ground-truth", (corpus_dir() / "ground_truth.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("hit@1=1"), std::string::npos) << r.out;

  r = run({"eval", "--json", "--mappings", out.string(), "--ground-truth", (dir_ / "gt.jsonl").string()});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(nlohmann::json::parse(r.out)["h5"], 1.0);
}

TEST_F(CliTest, EvalOnHandFixture) {
  const auto f = testing::nine_column_fixture();
  write_file(dir_ / "m9.jsonl", mappings_to_jsonl(f.mappings));
  write_file(dir_ / "gt9.jsonl", to_jsonl(f.truth));
  const auto r = run({"eval", "--json", "--mappings", (dir_ / "m9.jsonl").string(), "--ground-truth",
                      (dir_ / "gt9.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["h1"].get<double>(), 5.0 / 9.0);
  EXPECT_EQ(j["h5"].get<double>(), 7.0 / 9.0);
}

TEST_F(CliTest, RerunIsByteIdenticalAndInputsUntouched) {
  const auto before = hash_file(corpus_dir() / "metadata.jsonl") + hash_file(corpus_dir() / "glossary.jsonl");
  for (const char* sub : {"a", "b"}) {
    const auto r = run({"rank", "--corpus", corpus_dir().string(), "--meta-strategy", "label-sum-table",
                        "--gloss-strategy", "desc-sum-label", "--out", (dir_ / sub / "m.jsonl").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = run({"shard", "--corpus", corpus_dir().string(), "--n", "4", "--out", (dir_ / sub / "shards").string()});
    ASSERT_EQ(s.code, 0) << s.err;
  }
  EXPECT_EQ(read_file(dir_ / "a" / "m.jsonl"), read_file(dir_ / "b" / "m.jsonl"));
  EXPECT_EQ(read_file(dir_ / "a" / "m.scores.jsonl"), read_file(dir_ / "b" / "m.scores.jsonl"));
  EXPECT_EQ(read_file(dir_ / "a" / "shards" / "shards.json"), read_file(dir_ / "b" / "shards" / "shards.json"));
  for (int s = 0; s < 4; ++s) {
    const auto name = shard_file_name("glossary", s, 4);
    EXPECT_EQ(read_file(dir_ / "a" / "shards" / name), read_file(dir_ / "b" / "shards" / name));
  }
  EXPECT_EQ(hash_file(corpus_dir() / "metadata.jsonl") + hash_file(corpus_dir() / "glossary.jsonl"), before);
}

TEST_F(CliTest, ShardSeedIsRecorded) {
  const auto r = run({"--seed", "5", "shard", "--corpus", corpus_dir().string(), "--n", "3", "--out",
                      (dir_ / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(manifest_lines(dir_ / "s")[0]["config"]["seed"], 5);
  EXPECT_EQ(nlohmann::json::parse(read_file(dir_ / "s" / "shards.json"))["seed"], 5);
  EXPECT_EQ(run({"shard", "--corpus", corpus_dir().string(), "--n", "99", "--out", (dir_ / "t").string()}).code, 1);
}

TEST_F(CliTest, LlmMatchAgainstMock) {
  MockLlmServer server(load_mock_script("echo-valid-mapping", 17));
  server.start(0);
  const auto out = dir_ / "llm";
  const auto r = run({"llm-match", "--corpus", corpus_dir().string(), "--model", "gpt-4o", "--temperature", "0.75",
                      "--repetitions", "2", "--batch-size", "8", "--llm-url", server.base_url(), "--out",
                      out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep0 = out / "runs" / "gpt-4o" / "0.75" / "0";
  EXPECT_TRUE(std::filesystem::exists(rep0 / "0.request.json"));
  EXPECT_TRUE(std::filesystem::exists(rep0 / "2.response.json"));
  EXPECT_EQ(load_mappings(rep0 / "mappings.jsonl").size(), 20u);
  EXPECT_EQ(server.requests(), 6u);
  EXPECT_EQ(manifest_lines(out)[0]["command"], "llm-match");
}

TEST_F(CliTest, LlmMatchWithShards) {
  MockLlmServer server(load_mock_script("echo-valid-mapping", 17));
  server.start(0);
  setenv("CVA_LLM_URL", server.base_url().c_str(), 1);
  const auto r = run({"llm-match", "--corpus", corpus_dir().string(), "--model", "m", "--repetitions", "1",
                      "--shards", "3", "--out", (dir_ / "llm").string()});
  unsetenv("CVA_LLM_URL");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GE(server.requests(), 3u);
}

TEST_F(CliTest, LlmMatchWithoutUrlIsUsageError) {
  const auto r = run({"llm-match", "--corpus", corpus_dir().string(), "--model", "m", "--out", (dir_ / "x").string()});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, SweepConfigPrecedence) {
  MockLlmServer good(load_mock_script("echo-valid-mapping", 17));
  good.start(0);
  write_file(dir_ / "sweep.toml",
             "corpus = \"" + corpus_dir().string() + "\"\n"
             "ground_truth = \"" + (dir_ / "gt.jsonl").string() + "\"\n"
             "models = [\"a\", \"b\"]\n"
             "temperatures = [0.5, 1.0]\n"
             "repetitions = 3\n"
             "llm_url = \"http://127.0.0.1:1\"\n"
             "max_retries = 0\n"
             "out = \"" + (dir_ / "sweep").string() + "\"\n");
  setenv("CVA_LLM_URL", good.base_url().c_str(), 1);
  const auto r = run({"sweep", "--config", (dir_ / "sweep.toml").string(), "--repetitions", "1"});
  unsetenv("CVA_LLM_URL");
  ASSERT_EQ(r.code, 0) << r.err;
  // flag beats file (1 repetition), environment beats file (reachable endpoint)
  EXPECT_EQ(good.requests(), 4u);
  const auto report = read_file(dir_ / "sweep" / "report.jsonl");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 4);
  EXPECT_EQ(report.find("\"X\""), std::string::npos) << report;
  EXPECT_TRUE(std::filesystem::exists(dir_ / "sweep" / "report.txt"));
  EXPECT_NE(r.out.find("best: a @ 0.5"), std::string::npos) << r.out;
}

TEST_F(CliTest, SweepFlagBeatsEnvironment) {
  MockLlmServer good(load_mock_script("echo-valid-mapping", 17));
  good.start(0);
  setenv("CVA_LLM_URL", "http://127.0.0.1:1", 1);
  const auto r = run({"sweep", "--corpus", corpus_dir().string(), "--ground-truth", (dir_ / "gt.jsonl").string(),
                      "--models", "a", "--temperatures", "0.5", "--repetitions", "1", "--llm-url", good.base_url(),
                      "--out", (dir_ / "sweep").string()});
  unsetenv("CVA_LLM_URL");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(good.requests(), 1u);
}

TEST_F(CliTest, SweepUnknownConfigKey) {
  write_file(dir_ / "bad.toml", "bogus_key = 3\n");
  EXPECT_EQ(run({"sweep", "--config", (dir_ / "bad.toml").string()}).code, 2);
}

TEST_F(CliTest, SweepStrategies) {
  const auto r = run({"sweep", "--corpus", corpus_dir().string(), "--ground-truth", (dir_ / "gt.jsonl").string(),
                      "--strategies", "--out", (dir_ / "strat").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_file(dir_ / "strat" / "strategies.jsonl");
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 9);
}

TEST(CliBinary, RunsAsProcess) {
  const std::string cmd = std::string(CVA_CLI_PATH) + " frobnicate > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

}  // namespace
}  // namespace cva
