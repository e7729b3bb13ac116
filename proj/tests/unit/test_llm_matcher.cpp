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

#include <mutex>

#include "cva/llm_matcher.hpp"
#include "cva/mock_llm.hpp"
#include "support/fixtures.hpp"
#include "support/fuzz.hpp"

namespace cva {
namespace {

using testing::error_code_of;
using testing::TempDir;

std::string golden(const std::string& name) { return read_file(std::filesystem::path(CVA_GOLDEN_DIR) / name); }

std::string completion(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

/// In-process client: answers every batch with the mock endpoint's reply
/// logic, or with a canned body.
class ScriptedClient final : public ChatClient {
 public:
  std::function<std::string(const nlohmann::json&)> respond;

  std::string post(const std::string& body) override {
    const auto j = nlohmann::json::parse(body);
    {
      std::lock_guard lock(mu_);
      bodies.push_back(body);
    }
    return respond(j);
  }

  std::vector<std::string> bodies;

 private:
  std::mutex mu_;
};

std::string echo_reply(const nlohmann::json& request) {
  const auto view = detail::read_user_content(request["messages"][1]["content"].get<std::string>());
  std::string content;
  for (const auto& col : view.columns) {
    content += "'colID': '" + col.id + "', 'propID': " + detail::quoted_list(detail::plausible_ids(col, view.glossary)) + "\n";
  }
  return completion(content);
}

std::unordered_set<std::string> ids_of(const std::vector<GlossaryEntry>& g) {
  std::unordered_set<std::string> s;
  for (const auto& e : g) s.insert(e.id);
  return s;
}

LlmRunConfig run_config(std::string model = "m") {
  LlmRunConfig c;
  c.model = std::move(model);
  return c;
}

TEST(Prompts, RoundOneMatchesGoldenText) {
  EXPECT_EQ(assistant_instructions(Round::One), golden("round1_assistant_instructions.txt"));
  EXPECT_EQ(query_template(Round::One), golden("round1_query_template.txt"));
}

TEST(Prompts, RoundTwoRewordsVocabulary) {
  const auto a = assistant_instructions(Round::Two);
  const auto q = query_template(Round::Two);
  EXPECT_EQ(a.find("DBpedia"), std::string::npos);
  EXPECT_EQ(q.find("DBpedia"), std::string::npos);
  EXPECT_NE(a.find("vocabulary terms"), std::string::npos);
  EXPECT_NE(q.find(kInputSlot), std::string::npos);
  EXPECT_NE(a.find("no more 5"), std::string::npos);
}

TEST(Prompts, SubstitutesSerializedBatch) {
  const auto col = testing::column("c1", "Year", "Film", {"Title", "Year"});
  const auto b = render_prompts({col}, {testing::entry("g", "year")}, Round::One);
  EXPECT_EQ(b.user_query.find(kInputSlot), std::string::npos);
  EXPECT_NE(b.user_query.find(serialize_batch({col})), std::string::npos);
  EXPECT_NE(b.user_query.find(R"("id":"c1")"), std::string::npos);
  EXPECT_EQ(b.assistant_instructions, assistant_instructions(Round::One));
  EXPECT_EQ(b.glossary_payload, to_jsonl(std::vector<GlossaryEntry>{testing::entry("g", "year")}));
}

TEST(Prompts, EmptyBatchRejected) {
  EXPECT_EQ(error_code_of([] { render_prompts({}, {}, Round::One); }), Errc::EmptyBatch);
}

// No worked examples and no ground truth may appear in either prompt.
TEST(Prompts, ZeroShot) {
  for (auto r : {Round::One, Round::Two}) {
    for (const auto& text : {assistant_instructions(r), query_template(r)}) {
      EXPECT_EQ(text.find("Example"), std::string::npos);
      EXPECT_EQ(text.find("example"), std::string::npos);
      EXPECT_EQ(text.find("\"gt\""), std::string::npos);
    }
  }
}

TEST(ChatRequest, Shape) {
  auto cfg = run_config("gpt-x");
  cfg.temperature = 1.25;
  const auto b = render_prompts({testing::column("c1", "x")}, {testing::entry("g1", "x")}, Round::One);
  const auto req = build_chat_request(cfg, b, Round::One);
  EXPECT_EQ(req["model"], "gpt-x");
  EXPECT_EQ(req["temperature"], 1.25);
  ASSERT_EQ(req["messages"].size(), 2u);
  EXPECT_EQ(req["messages"][0]["role"], "system");
  EXPECT_EQ(req["messages"][0]["content"], b.assistant_instructions);
  EXPECT_EQ(req["messages"][1]["role"], "user");
  const std::string user = req["messages"][1]["content"];
  EXPECT_NE(user.find(b.glossary_payload), std::string::npos);
  EXPECT_EQ(user.substr(user.size() - b.user_query.size()), b.user_query);
}

TEST(ChatRequest, ContextBudget) {
  auto cfg = run_config();
  cfg.context_budget_bytes = 10;
  const auto b = render_prompts({testing::column("c1", "x")}, {testing::entry("g1", "a long enough label")}, Round::One);
  EXPECT_EQ(error_code_of([&] { build_chat_request(cfg, b, Round::One); }), Errc::ContextTooLarge);
}

TEST(RunConfig, Validation) {
  auto cfg = run_config();
  cfg.temperature = 2.5;
  EXPECT_EQ(error_code_of([&] { cfg.validate(); }), Errc::InvalidArgument);
  cfg.temperature = 2.0;
  cfg.validate();
  cfg.model.clear();
  EXPECT_EQ(error_code_of([&] { cfg.validate(); }), Errc::InvalidArgument);
}

TEST(RunConfig, TemperatureFormatting) {
  EXPECT_EQ(format_temperature(0.5), "0.5");
  EXPECT_EQ(format_temperature(1.0), "1.0");
  EXPECT_EQ(format_temperature(0.0), "0.0");
  EXPECT_EQ(format_temperature(1.25), "1.25");
}

TEST(Completion, ContentAndRefusal) {
  EXPECT_EQ(completion_content(completion("hello")), "hello");
  EXPECT_EQ(error_code_of([] { completion_content("{}"); }), Errc::Unparseable);
  EXPECT_EQ(error_code_of([] { completion_content("not json"); }), Errc::Unparseable);
  EXPECT_TRUE(is_refusal("failure"));
  EXPECT_TRUE(is_refusal("  'Failure: cannot comply'"));
  EXPECT_FALSE(is_refusal("'colID': 'failure'"));
}

TEST(ParseResponse, PublishedFormat) {
  const std::unordered_set<std::string> known = {"http://dbpedia.org/ontology/director"};
  const auto p = parse_llm_response("'colID': 'c1', 'propID': ['http://dbpedia.org/ontology/director']", known);
  ASSERT_EQ(p.mappings.size(), 1u);
  EXPECT_EQ(p.mappings[0].column_id, "c1");
  EXPECT_EQ(p.mappings[0].ids(), std::vector<std::string>{"http://dbpedia.org/ontology/director"});
}

TEST(ParseResponse, FiltersAndTruncates) {
  const std::unordered_set<std::string> known = {"a", "b", "c", "d", "e", "f"};
  const auto p = parse_llm_response("'colID': 'c1', 'propID': ['a', 'x', 'b', 'c', 'y', 'd', 'e']", known);
  ASSERT_EQ(p.mappings.size(), 1u);
  EXPECT_EQ(p.mappings[0].ids(), (std::vector<std::string>{"a", "b", "c", "d", "e"}));
  EXPECT_EQ(p.dropped_unknown, 2u);
}

TEST(ParseResponse, DeduplicatesAtFirstRank) {
  const std::unordered_set<std::string> known = {"a", "b"};
  const auto p = parse_llm_response("'colID': 'c1', 'propID': ['b', 'a', 'b']", known);
  EXPECT_EQ(p.mappings[0].ids(), (std::vector<std::string>{"b", "a"}));
}

TEST(ParseResponse, OtherShapes) {
  const std::unordered_set<std::string> known = {"a", "b", "o'neil"};
  auto p = parse_llm_response(R"([{"colID":"c1","propID":"a"},{"colID":"c2","propID":["b"]}])", known);
  ASSERT_EQ(p.mappings.size(), 2u);
  EXPECT_EQ(p.mappings[1].ids(), std::vector<std::string>{"b"});

  p = parse_llm_response("Here you go:\n```\n'colID': 'c1', 'propID': ['o'neil', ..., 'a'].\n```\nDone.", known);
  ASSERT_EQ(p.mappings.size(), 1u);
  EXPECT_EQ(p.mappings[0].ids(), (std::vector<std::string>{"o'neil", "a"}));

  p = parse_llm_response("'colID': 'c1', 'propID': ['zzz']", known);
  EXPECT_TRUE(p.mappings.empty());
  EXPECT_EQ(p.unanswered, std::vector<std::string>{"c1"});

  EXPECT_EQ(error_code_of([&] { parse_llm_response("I cannot help with that.", known); }), Errc::Unparseable);
}

TEST(ParserProperty, FuzzCorpusAgreesWithOracle) {
  const auto corpus = testing::parser_fuzz_corpus(300, 99);
  for (std::size_t i = 0; i < corpus.cases.size(); ++i) {
    const auto& c = corpus.cases[i];
    if (c.expect_unparseable) {
      EXPECT_EQ(error_code_of([&] { parse_llm_response(c.text, corpus.known_ids); }), Errc::Unparseable) << c.text;
      continue;
    }
    const auto p = parse_llm_response(c.text, corpus.known_ids);
    std::vector<std::pair<std::string, std::vector<std::string>>> got_answered, want_answered;
    std::vector<std::string> want_unanswered;
    for (const auto& m : p.mappings) got_answered.emplace_back(m.column_id, m.ids());
    for (const auto& [col, ids] : c.expected) {
      if (ids.empty()) {
        want_unanswered.push_back(col);
      } else {
        want_answered.emplace_back(col, ids);
      }
    }
    EXPECT_EQ(got_answered, want_answered) << "case " << i << ":\n" << c.text;
    EXPECT_EQ(p.unanswered, want_unanswered) << "case " << i << ":\n" << c.text;
  }
}

TEST(RunMatching, BatchesAndRepetitions) {
  const auto c = testing::synthetic_corpus(141, 50);
  ScriptedClient client;
  client.respond = echo_reply;
  const auto outcomes = run_matching(c, run_config(), Round::One, client);
  ASSERT_EQ(outcomes.size(), 3u);
  EXPECT_EQ(client.bodies.size(), 18u);
  for (const auto& o : outcomes) {
    EXPECT_TRUE(o.completed());
    EXPECT_EQ(o.requests, 6u);
    EXPECT_EQ(o.mappings.size(), 141u);
    EXPECT_TRUE(o.unanswered.empty());
  }
  // 5 x 25 + 16
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto j = nlohmann::json::parse(client.bodies[i]);
    sizes.push_back(detail::read_user_content(j["messages"][1]["content"]).columns.size());
  }
  EXPECT_EQ(sizes, (std::vector<std::size_t>{25, 25, 25, 25, 25, 16}));
}

TEST(RunMatching, ConcurrentBatchesGiveSameResult) {
  const auto c = testing::synthetic_corpus(60, 30);
  ScriptedClient a, b;
  a.respond = b.respond = echo_reply;
  auto cfg = run_config();
  cfg.repetitions = 1;
  cfg.batch_size = 7;
  const auto serial = run_matching(c, cfg, Round::One, a);
  cfg.max_in_flight = 4;
  const auto parallel = run_matching(c, cfg, Round::One, b);
  EXPECT_EQ(serial[0].mappings, parallel[0].mappings);
}

TEST(RunMatching, OneFailedBatchFailsTheRepetition) {
  const auto c = testing::synthetic_corpus(50, 10);
  ScriptedClient client;
  int calls = 0;
  client.respond = [&](const nlohmann::json& req) {
    return ++calls == 2 ? completion("failure") : echo_reply(req);
  };
  auto cfg = run_config();
  cfg.repetitions = 2;
  const auto outcomes = run_matching(c, cfg, Round::One, client);
  EXPECT_FALSE(outcomes[0].completed());
  EXPECT_EQ(outcomes[0].failure_reason, "batch 1: model refusal");
  EXPECT_TRUE(outcomes[0].mappings.empty());
  EXPECT_TRUE(outcomes[1].completed());
}

TEST(RunMatching, ColumnsOutsideTheBatchAreIgnored) {
  Corpus c;
  c.columns = {testing::column("c1", "a"), testing::column("c2", "b")};
  c.glossary = {testing::entry("g1", "a"), testing::entry("g2", "b")};
  ScriptedClient client;
  client.respond = [](const nlohmann::json&) {
    return completion("'colID': 'c1', 'propID': ['g1']\n'colID': 'other', 'propID': ['g2']");
  };
  auto cfg = run_config();
  cfg.repetitions = 1;
  const auto o = run_matching(c, cfg, Round::One, client)[0];
  ASSERT_EQ(o.mappings.size(), 1u);
  EXPECT_EQ(o.unanswered, std::vector<std::string>{"c2"});
}

TEST(RunMatching, ArchivesEveryExchange) {
  TempDir dir;
  const auto c = testing::synthetic_corpus(30, 10);
  ScriptedClient client;
  client.respond = echo_reply;
  auto cfg = run_config("org/model:1");
  cfg.repetitions = 2;
  cfg.batch_size = 20;
  MatchingOptions opts;
  opts.archive_root = dir.path();
  run_matching(c, cfg, Round::One, client, opts);
  for (int rep = 0; rep < 2; ++rep) {
    const auto d = archive_dir(dir.path(), cfg, rep);
    EXPECT_EQ(d, dir.path() / "runs" / "org_model_1" / "0.5" / std::to_string(rep));
    for (int b = 0; b < 2; ++b) {
      EXPECT_TRUE(std::filesystem::exists(d / (std::to_string(b) + ".request.json")));
      EXPECT_TRUE(std::filesystem::exists(d / (std::to_string(b) + ".response.json")));
    }
  }
}

TEST(RunMatching, ShardedBatchesOnlySeeTheirShard) {
  const auto c = testing::synthetic_corpus(10, 6);
  ShardAssignment sa;
  sa.n_shards = 2;
  sa.glossary_shard = {0, 0, 0, 1, 1, 1};
  sa.column_shard = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  ScriptedClient client;
  client.respond = echo_reply;
  auto cfg = run_config();
  cfg.repetitions = 1;
  MatchingOptions opts;
  opts.shards = &sa;
  const auto o = run_matching(c, cfg, Round::One, client, opts)[0];
  ASSERT_EQ(client.bodies.size(), 2u);
  for (const auto& body : client.bodies) {
    const auto view = detail::read_user_content(nlohmann::json::parse(body)["messages"][1]["content"]);
    EXPECT_EQ(view.glossary.size(), 3u);
    EXPECT_EQ(view.columns.size(), 5u);
  }
  for (const auto& m : o.mappings) {
    const std::size_t col = std::stoul(m.column_id.substr(1));
    for (const auto& id : m.ids()) EXPECT_EQ(sa.glossary_shard[std::stoul(id.substr(1))], sa.column_shard[col]);
  }
}

class MockEndpointTest : public ::testing::Test {
 protected:
  std::unique_ptr<HttpChatClient> client_for(MockLlmServer& server, int max_retries, std::chrono::milliseconds timeout) {
    HttpChatConfig hc;
    hc.base_url = server.base_url();
    hc.post.retry.max_retries = max_retries;
    hc.post.retry.initial_backoff = std::chrono::milliseconds(10);
    hc.post.timeout = timeout;
    return std::make_unique<HttpChatClient>(hc);
  }

  Corpus corpus_ = testing::self_glossary_corpus(30);
};

TEST_F(MockEndpointTest, RetriesAfterRateLimiting) {
  MockLlmServer server(load_mock_script("rate-limit(2)", 17));
  server.start(0);
  auto client = client_for(server, 3, std::chrono::seconds(5));
  auto cfg = run_config();
  cfg.repetitions = 1;
  cfg.batch_size = 50;
  const auto o = run_matching(corpus_, cfg, Round::One, *client)[0];
  EXPECT_TRUE(o.completed()) << o.failure_reason;
  EXPECT_EQ(server.requests(), 3u);
}

TEST_F(MockEndpointTest, RateLimitExhaustsRetries) {
  MockLlmServer server(load_mock_script("rate-limit(5)", 17));
  server.start(0);
  auto client = client_for(server, 1, std::chrono::seconds(5));
  auto cfg = run_config();
  cfg.repetitions = 1;
  cfg.batch_size = 50;
  const auto o = run_matching(corpus_, cfg, Round::One, *client)[0];
  EXPECT_EQ(o.failure_reason, "batch 0: rate limited");
}

TEST_F(MockEndpointTest, TimeoutFailsTheRun) {
  MockLlmServer server(load_mock_script("timeout(3000)", 17));
  server.start(0);
  auto client = client_for(server, 1, std::chrono::milliseconds(150));
  auto cfg = run_config();
  cfg.repetitions = 1;
  cfg.batch_size = 50;
  const auto o = run_matching(corpus_, cfg, Round::One, *client)[0];
  EXPECT_FALSE(o.completed());
  EXPECT_EQ(o.failure_reason, "batch 0: timeout");
  server.stop();
}

TEST_F(MockEndpointTest, FailureReplyIsModelRefusal) {
  MockLlmServer server(load_mock_script("fail-rate(1.0)", 17));
  server.start(0);
  auto client = client_for(server, 0, std::chrono::seconds(5));
  const auto outcomes = run_matching(corpus_, run_config(), Round::One, *client);
  ASSERT_EQ(outcomes.size(), 3u);
  for (const auto& o : outcomes) EXPECT_EQ(o.failure_reason, "batch 0: model refusal");
}

TEST_F(MockEndpointTest, EchoCompletesWithEveryColumnMapped) {
  MockLlmServer server(load_mock_script("echo-valid-mapping", 17));
  server.start(0);
  auto client = client_for(server, 0, std::chrono::seconds(5));
  auto cfg = run_config();
  cfg.batch_size = 7;
  for (const auto& o : run_matching(corpus_, cfg, Round::One, *client)) {
    ASSERT_TRUE(o.completed());
    ASSERT_EQ(o.mappings.size(), corpus_.columns.size());
    for (std::size_t i = 0; i < o.mappings.size(); ++i) EXPECT_EQ(o.mappings[i].ids().front(), corpus_.glossary[i].id);
  }
}

TEST_F(MockEndpointTest, HallucinationsAreFiltered) {
  MockLlmServer server(load_mock_script("inject-hallucinations", 17));
  server.start(0);
  auto client = client_for(server, 0, std::chrono::seconds(5));
  const auto known = ids_of(corpus_.glossary);
  for (const auto& o : run_matching(corpus_, run_config(), Round::Two, *client)) {
    ASSERT_TRUE(o.completed());
    for (const auto& m : o.mappings) {
      EXPECT_LE(m.ranked.size(), 5u);
      for (const auto& id : m.ids()) EXPECT_TRUE(known.count(id)) << id;
    }
  }
}

TEST(MockBehavior, Parsing) {
  EXPECT_EQ(parse_mock_behavior("fail-rate(0.25)").fail_probability, 0.25);
  EXPECT_EQ(parse_mock_behavior("timeout(1500)").delay, std::chrono::milliseconds(1500));
  EXPECT_EQ(parse_mock_behavior("rate-limit(2)").rate_limited_responses, 2);
  EXPECT_EQ(error_code_of([] { parse_mock_behavior("fail-rate(2)"); }), Errc::InvalidArgument);
  EXPECT_EQ(error_code_of([] { parse_mock_behavior("explode"); }), Errc::InvalidArgument);
}

TEST(MockBehavior, ScriptFilePerModel) {
  TempDir dir;
  write_file(dir / "s.json", R"js({"default":"echo-valid-mapping","models":{"bad":"fail-rate(1.0)"},"seed":3})js");
  const auto s = load_mock_script((dir / "s.json").string(), 17);
  EXPECT_EQ(s.seed, 3u);
  EXPECT_EQ(s.behavior_for("bad").kind, MockBehavior::Kind::FailRate);
  EXPECT_EQ(s.behavior_for("good").kind, MockBehavior::Kind::EchoValidMapping);
}

}  // namespace
}  // namespace cva
