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

// Zero-shot matching of column metadata against a glossary through a
// chat-completions endpoint.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/error.hpp"
#include "cva/hashing.hpp"
#include "cva/http_util.hpp"
#include "cva/ranker.hpp"

namespace cva {

inline constexpr std::size_t kMaxIdsPerColumn = 5;
inline constexpr std::string_view kInputSlot = "{input_metadata}";

enum class Round { One = 1, Two = 2 };

inline Round parse_round(int r) {
  if (r == 1) return Round::One;
  if (r == 2) return Round::Two;
  throw Error(Errc::InvalidArgument, "round must be 1 or 2");
}

struct PromptBundle {
  std::string assistant_instructions;
  std::string user_query;
  std::string glossary_payload;
};

namespace detail {

struct VocabularyWording {
  std::string_view plural;    // "DBpedia properties"
  std::string_view singular;  // "DBpedia property"
  std::string_view items;     // "properties"
  std::string_view matched;   // "DBpedia" in "Sort the matched DBpedia ..."
  std::string_view id_example;
};

// Round 2 wording is a parameterization of the Round 1 text, not a verbatim
// copy of the challenge prompts.
inline VocabularyWording wording(Round round) {
  if (round == Round::One) {
    return {"DBpedia properties", "DBpedia property", "properties", "DBpedia",
            "http://dbpedia.org/ontology/PROPERTY_ID"};
  }
  return {"vocabulary terms", "vocabulary term", "terms", "vocabulary terms", "TERM_ID"};
}

inline std::string format_line(const VocabularyWording& w) {
  std::string id(w.id_example);
  return "'colID': '00000_0_0000_XXX', 'propID': ['" + id + "', ..., '" + id + "'].";
}

inline std::string lines(std::initializer_list<std::string> ls) {
  std::string out;
  for (const auto& l : ls) {
    out += l;
    out += '\n';
  }
  return out;
}

}  // namespace detail

/// System-role instructions. The "no more 5" and format lines are repeated in
/// the query template on purpose.
inline std::string assistant_instructions(Round round) {
  const auto w = detail::wording(round);
  const std::string p(w.plural);
  return detail::lines({
      "Your task is to match column metadata to " + p + ".",
      "The full set of " + p + " will be provided in the vector.",
      "Columns metadata, instead, will be provided by the user and it will contain the following information: "
      "column ID, column label, table ID, table name and the labels of the other columns within that table. "
      "The matching between the column and the " + p +
          " is to be made based on the semantic similarities between the metadata (i.e. what the column express), "
          "and " + p + ".",
      "You can add multiple " + std::string(w.items) + ", but no more 5.",
      "Return the results in the following format:",
      detail::format_line(w),
      "Sort the matched " + std::string(w.matched) +
          " in descending order of relevance, starting with the most relevant.",
      "Choose ONLY from the " + p + ".",
      "Return ONLY the results, no other text.",
      "Return results for each and every single column metadata.",
  });
}

/// User-role template with the literal {input_metadata} slot.
inline std::string query_template(Round round) {
  const auto w = detail::wording(round);
  const std::string p(w.plural);
  return detail::lines({
      "Based on the instruction given to you, find the most relevant " + std::string(w.singular) +
          ", for each of the following metadata in json format:",
      std::string(kInputSlot),
      "Each json element is an independent column metadata. The metadata do not have any relationship, so the "
      "matching with the " + p + " should only be based on the information provided within its own metadata.",
      "You can add multiple " + std::string(w.items) + ", but no more 5.",
      "Return the results in the following format:",
      detail::format_line(w),
      "Sort the matched " + std::string(w.matched) +
          " in descending order of relevance, starting with the most relevant.",
      "Choose ONLY from the " + p + " provided in the vector.",
      "Return ONLY the results, no other text.",
      "Return results for each and every single column metadata.",
  });
}

inline std::string serialize_batch(const std::vector<ColumnMetadata>& batch) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : batch) arr.push_back(to_json(c));
  return arr.dump();
}

inline PromptBundle render_prompts(const std::vector<ColumnMetadata>& batch, const std::vector<GlossaryEntry>& glossary,
                                   Round round) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "no columns to match");
  PromptBundle b;
  b.assistant_instructions = assistant_instructions(round);
  b.user_query = query_template(round);
  b.user_query.replace(b.user_query.find(kInputSlot), kInputSlot.size(), serialize_batch(batch));
  b.glossary_payload = to_jsonl(glossary);
  return b;
}

struct LlmRunConfig {
  std::string model;
  double temperature = 0.5;
  std::size_t batch_size = 25;
  int repetitions = 3;
  int max_retries = 3;
  std::chrono::milliseconds timeout{120000};
  std::chrono::milliseconds initial_backoff{500};
  int max_in_flight = 1;
  std::chrono::milliseconds min_request_interval{0};
  std::size_t context_budget_bytes = std::size_t{8} << 20;

  void validate() const {
    if (model.empty()) throw Error(Errc::InvalidArgument, "model name is empty");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw Error(Errc::InvalidArgument, "temperature must be in [0, 2]");
    if (batch_size == 0) throw Error(Errc::InvalidArgument, "batch size must be positive");
    if (repetitions < 1) throw Error(Errc::InvalidArgument, "repetitions must be >= 1");
    if (max_retries < 0) throw Error(Errc::InvalidArgument, "max retries must be >= 0");
  }
};

/// "0.5", "0.75", "1.0", "1.25": shortest decimal with at least one fraction digit.
inline std::string format_temperature(double t) {
  std::ostringstream os;
  os.precision(6);
  os << t;
  auto s = os.str();
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

/// The chat request body for one batch. The glossary is inlined ahead of the
/// query because plain chat endpoints have no attachment mechanism.
inline nlohmann::ordered_json build_chat_request(const LlmRunConfig& config, const PromptBundle& bundle, Round round) {
  if (bundle.glossary_payload.size() > config.context_budget_bytes) {
    throw Error(Errc::ContextTooLarge, "glossary payload of " + std::to_string(bundle.glossary_payload.size()) +
                                           " bytes exceeds the context budget; consider sharding");
  }
  std::string user = bundle.user_query;
  if (!bundle.glossary_payload.empty()) {
    user = "The " + std::string(detail::wording(round).plural) + " (one JSON object per line):\n" +
           bundle.glossary_payload + "\n" + bundle.user_query;
  }
  nlohmann::ordered_json req;
  req["model"] = config.model;
  req["temperature"] = config.temperature;
  req["messages"] = nlohmann::ordered_json::array({
      {{"role", "system"}, {"content", bundle.assistant_instructions}},
      {{"role", "user"}, {"content", user}},
  });
  return req;
}

/// Transport for chat requests. Returns the raw response body or throws
/// cva::Error once retries are exhausted. Must be callable concurrently.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string post(const std::string& request_body) = 0;
};

struct HttpChatConfig {
  std::string base_url;
  std::string api_key;
  http::PostOptions post;
  std::chrono::milliseconds min_request_interval{0};

  /// Fills url and key from CVA_LLM_URL / CVA_LLM_API_KEY when unset.
  void apply_env() {
    if (base_url.empty()) base_url = http::env_or("CVA_LLM_URL");
    if (api_key.empty()) api_key = http::env_or("CVA_LLM_API_KEY");
  }
};

class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(HttpChatConfig config)
      : config_(std::move(config)), endpoint_(http::parse_base_url(config_.base_url)),
        limiter_(config_.min_request_interval) {
    config_.post.api_key = config_.api_key;
  }

  std::string post(const std::string& request_body) override {
    auto res = http::post_json(endpoint_, "/v1/chat/completions", request_body, config_.post, &limiter_);
    if (!res.ok()) throw Error(res.failure_code, res.failure);
    return res.body;
  }

 private:
  HttpChatConfig config_;
  http::Endpoint endpoint_;
  http::RateLimiter limiter_;
};

/// Extracts choices[0].message.content from a chat-completions body.
inline std::string completion_content(const std::string& body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::Unparseable, "malformed completion body");
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) {
    throw Error(Errc::Unparseable, "malformed completion body");
  }
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object()) {
    throw Error(Errc::Unparseable, "malformed completion body");
  }
  const auto& msg = first["message"];
  if (!msg.contains("content") || !msg["content"].is_string()) throw Error(Errc::Unparseable, "malformed completion body");
  return msg["content"].get<std::string>();
}

inline bool is_refusal(std::string_view content) {
  auto t = detail::trim(content);
  while (!t.empty() && (t.front() == '"' || t.front() == '\'')) t.remove_prefix(1);
  constexpr std::string_view word = "failure";
  if (t.size() < word.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(t[i])) != word[i]) return false;
  }
  return true;
}

struct ChatExchange {
  std::string request_body;
  std::string response_body;
  std::string content;
};

/// Sends one bundle and fills `ex` as far as the exchange got, so callers can
/// archive partial exchanges. A "failure" reply is surfaced as ModelRefusal.
inline void chat_complete(const LlmRunConfig& config, const PromptBundle& bundle, Round round, ChatClient& client,
                          ChatExchange& ex) {
  ex.request_body = build_chat_request(config, bundle, round).dump();
  ex.response_body = client.post(ex.request_body);
  ex.content = completion_content(ex.response_body);
  if (is_refusal(ex.content)) throw Error(Errc::ModelRefusal, "model refusal");
}

inline ChatExchange chat_complete(const LlmRunConfig& config, const PromptBundle& bundle, Round round,
                                  ChatClient& client) {
  ChatExchange ex;
  chat_complete(config, bundle, round, client, ex);
  return ex;
}

/// Short reason recorded for a failed run.
inline std::string failure_reason(const Error& e) {
  switch (e.code()) {
    case Errc::Timeout: return "timeout";
    case Errc::ModelRefusal: return "model refusal";
    case Errc::RateLimited: return "rate limited";
    case Errc::Unparseable: return "unparseable response";
    default: return e.what();
  }
}

// ---------------------------------------------------------------------------
// Response parsing

struct ParsedResponse {
  std::vector<RankedMapping> mappings;  // only columns with at least one surviving id
  std::vector<std::string> unanswered;  // columns named in the reply with no surviving id
  std::size_t dropped_unknown = 0;
};

namespace detail {

inline std::string strip_code_fences(std::string_view text) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (trim(line).substr(0, 3) != "```") {
      out.append(line);
      out.push_back('\n');
    }
    pos = nl + 1;
  }
  return out;
}

struct RawPair {
  std::string column;
  std::vector<std::string> ids;
};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

/// Lenient tokenizer for the single-quoted pseudo-JSON the instructions ask
/// for. A closing quote only counts when followed by a delimiter, so
/// apostrophes inside ids survive.
class LenientScanner {
 public:
  explicit LenientScanner(std::string_view text) : s_(text) {}

  std::vector<RawPair> scan() {
    std::vector<RawPair> out;
    std::size_t pos = 0;
    while ((pos = find_key("colID", pos)) != npos) {
      RawPair pair;
      std::size_t p = after_colon(pos + 5);
      if (p == npos) {
        pos += 5;
        continue;
      }
      auto col = read_scalar(p, ",}]\n");
      if (!col) {
        pos += 5;
        continue;
      }
      pair.column = std::move(*col);
      const std::size_t next_col = find_key("colID", p);
      std::size_t prop = find_key("propID", p);
      if (prop != npos && (next_col == npos || prop < next_col)) {
        std::size_t q = after_colon(prop + 6);
        if (q != npos) pair.ids = read_id_list(q);
      }
      out.push_back(std::move(pair));
      pos = next_col == npos ? s_.size() : next_col;
    }
    return out;
  }

 private:
  static constexpr std::size_t npos = std::string_view::npos;

  // Key must be wrapped in matching quotes, or bare followed by a colon.
  std::size_t find_key(std::string_view key, std::size_t from) const {
    while (from < s_.size()) {
      auto at = s_.find(key, from);
      if (at == npos) return npos;
      const char before = at > 0 ? s_[at - 1] : '\0';
      const std::size_t end = at + key.size();
      const char after = end < s_.size() ? s_[end] : '\0';
      if ((before == '\'' || before == '"') && after == before) return at;
      if (before != '\'' && before != '"') {
        std::size_t k = end;
        while (k < s_.size() && is_space(s_[k])) ++k;
        if (k < s_.size() && s_[k] == ':') return at;
      }
      from = at + 1;
    }
    return npos;
  }

  // Position just past ':' that follows the key (and its closing quote).
  std::size_t after_colon(std::size_t p) const {
    if (p < s_.size() && (s_[p] == '\'' || s_[p] == '"')) ++p;
    while (p < s_.size() && is_space(s_[p])) ++p;
    if (p >= s_.size() || s_[p] != ':') return npos;
    ++p;
    while (p < s_.size() && is_space(s_[p])) ++p;
    return p < s_.size() ? p : npos;
  }

  std::optional<std::string> read_quoted(std::size_t& p, std::string_view terminators) const {
    const char q = s_[p];
    std::string out;
    std::size_t i = p + 1;
    while (i < s_.size()) {
      const char c = s_[i];
      if (c == '\\' && i + 1 < s_.size()) {
        const char e = s_[i + 1];
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          default: out.push_back(e); break;
        }
        i += 2;
        continue;
      }
      if (c == q) {
        std::size_t k = i + 1;
        while (k < s_.size() && (s_[k] == ' ' || s_[k] == '\t' || s_[k] == '\r')) ++k;
        if (k >= s_.size() || terminators.find(s_[k]) != std::string_view::npos) {
          p = i + 1;
          return out;
        }
      }
      if (c == '\n') break;
      out.push_back(c);
      ++i;
    }
    return std::nullopt;
  }

  std::optional<std::string> read_scalar(std::size_t& p, std::string_view terminators) const {
    if (p >= s_.size()) return std::nullopt;
    if (s_[p] == '\'' || s_[p] == '"') return read_quoted(p, terminators);
    std::size_t e = p;
    while (e < s_.size() && terminators.find(s_[e]) == std::string_view::npos) ++e;
    auto tok = trim(s_.substr(p, e - p));
    p = e;
    if (tok.empty()) return std::nullopt;
    return std::string(tok);
  }

  std::vector<std::string> read_id_list(std::size_t p) const {
    std::vector<std::string> ids;
    if (s_[p] != '[') {
      if (auto one = read_scalar(p, ",}]\n")) ids.push_back(std::move(*one));
      return ids;
    }
    ++p;
    while (p < s_.size()) {
      while (p < s_.size() && (is_space(s_[p]) || s_[p] == ',')) ++p;
      if (p >= s_.size() || s_[p] == ']' || s_[p] == '}') break;
      const std::size_t before = p;
      auto item = read_scalar(p, ",]}\n");
      if (item && *item != "...") ids.push_back(std::move(*item));
      if (p == before) ++p;
    }
    return ids;
  }

  std::string_view s_;
};

inline void collect_strict(const nlohmann::json& j, std::vector<RawPair>& out) {
  if (j.is_array()) {
    for (const auto& e : j) collect_strict(e, out);
    return;
  }
  if (!j.is_object()) return;
  auto col = j.find("colID");
  auto prop = j.find("propID");
  if (col == j.end() || !col->is_string()) return;
  RawPair pair{col->get<std::string>(), {}};
  if (prop != j.end()) {
    if (prop->is_string()) {
      pair.ids.push_back(prop->get<std::string>());
    } else if (prop->is_array()) {
      for (const auto& v : *prop) {
        if (v.is_string()) pair.ids.push_back(v.get<std::string>());
      }
    }
  }
  out.push_back(std::move(pair));
}

/// Strict JSON first (whole text, then line by line), lenient scan otherwise.
inline std::vector<RawPair> extract_pairs(std::string_view text) {
  const auto body = strip_code_fences(text);
  std::vector<RawPair> pairs;
  auto whole = nlohmann::json::parse(body, nullptr, false);
  if (!whole.is_discarded()) {
    collect_strict(whole, pairs);
    if (!pairs.empty()) return pairs;
  }
  bool all_lines_json = true;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty()) continue;
    if (t.back() == ',') t.remove_suffix(1);
    auto j = nlohmann::json::parse(t, nullptr, false);
    if (j.is_discarded()) {
      all_lines_json = false;
      break;
    }
    collect_strict(j, pairs);
  }
  if (all_lines_json && !pairs.empty()) return pairs;
  return LenientScanner(body).scan();
}

}  // namespace detail

/// Tolerant extraction of colID/propID pairs. Ids outside `known_ids` are
/// dropped, duplicates keep their first rank, and each column keeps at most
/// five ids. Repeated colIDs are merged in order of appearance.
inline ParsedResponse parse_llm_response(std::string_view text, const std::unordered_set<std::string>& known_ids) {
  const auto pairs = detail::extract_pairs(text);
  if (pairs.empty()) throw Error(Errc::Unparseable, "no colID/propID pairs found");

  ParsedResponse out;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::string>> merged;
  for (const auto& pair : pairs) {
    if (pair.column.empty()) continue;
    auto [it, inserted] = merged.try_emplace(pair.column);
    if (inserted) order.push_back(pair.column);
    auto& ids = it->second;
    for (const auto& id : pair.ids) {
      if (!known_ids.count(id)) {
        ++out.dropped_unknown;
        continue;
      }
      if (ids.size() >= kMaxIdsPerColumn) continue;
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
  }
  if (order.empty()) throw Error(Errc::Unparseable, "no colID/propID pairs found");
  for (const auto& col : order) {
    const auto& ids = merged[col];
    if (ids.empty()) {
      out.unanswered.push_back(col);
      continue;
    }
    RankedMapping m{col, {}};
    for (const auto& id : ids) m.ranked.push_back({id, std::nullopt});
    out.mappings.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct RunOutcome {
  enum class Status { Completed, Failed };

  Status status = Status::Completed;
  std::vector<RankedMapping> mappings;   // corpus order, at most one per column
  std::vector<std::string> unanswered;   // columns with no usable answer
  std::vector<std::string> raw_responses;
  std::string failure_reason;
  std::size_t requests = 0;

  bool completed() const { return status == Status::Completed; }

  static RunOutcome failed(std::string reason) {
    RunOutcome o;
    o.status = Status::Failed;
    o.failure_reason = std::move(reason);
    return o;
  }
};

/// Optional glossary sharding: every glossary entry and column carries the
/// index of the shard it belongs to.
struct ShardAssignment {
  std::size_t n_shards = 0;
  std::vector<std::size_t> glossary_shard;
  std::vector<std::size_t> column_shard;
};

struct MatchingOptions {
  std::filesystem::path archive_root;  // empty: no archive
  const ShardAssignment* shards = nullptr;
};

/// One request's worth of work.
struct MatchBatch {
  std::vector<ColumnMetadata> columns;
  const std::vector<GlossaryEntry>* glossary = nullptr;
  std::unordered_set<std::string> known_ids;
};

inline std::string sanitize_path_component(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(c == '/' || c == '\\' || c == ':' || c == ' ' ? '_' : c);
  if (out.empty() || out == "." || out == "..") out = "_";
  return out;
}

/// runs/<model>/<temperature>/<repetition>
inline std::filesystem::path archive_dir(const std::filesystem::path& root, const LlmRunConfig& config, int repetition) {
  return root / "runs" / sanitize_path_component(config.model) / format_temperature(config.temperature) /
         std::to_string(repetition);
}

namespace detail {

struct BatchResult {
  bool ok = false;
  std::string reason;
  std::string content;
  ParsedResponse parsed;
};

inline std::string pretty_or_raw(const std::string& body) {
  auto j = nlohmann::ordered_json::parse(body, nullptr, false);
  if (j.is_discarded()) return body;
  return j.dump(2) + "\n";
}

}  // namespace detail

/// Runs `config.repetitions` independent passes over the corpus. Each pass
/// splits the columns into batches, queries the endpoint and merges the
/// parsed answers. Failures are recorded per repetition, never thrown.
inline std::vector<RunOutcome> run_matching(const Corpus& corpus, const LlmRunConfig& config, Round round,
                                            ChatClient& client, const MatchingOptions& options = {}) {
  config.validate();

  std::vector<std::vector<GlossaryEntry>> shard_glossaries;
  std::vector<MatchBatch> batches;
  auto add_batches = [&](const std::vector<ColumnMetadata>& cols, const std::vector<GlossaryEntry>* glossary) {
    std::unordered_set<std::string> known;
    for (const auto& g : *glossary) known.insert(g.id);
    for (std::size_t i = 0; i < cols.size(); i += config.batch_size) {
      MatchBatch b;
      b.columns.assign(cols.begin() + static_cast<std::ptrdiff_t>(i),
                       cols.begin() + static_cast<std::ptrdiff_t>(std::min(cols.size(), i + config.batch_size)));
      b.glossary = glossary;
      b.known_ids = known;
      batches.push_back(std::move(b));
    }
  };

  if (options.shards) {
    const auto& sa = *options.shards;
    if (sa.glossary_shard.size() != corpus.glossary.size() || sa.column_shard.size() != corpus.columns.size()) {
      throw Error(Errc::InvalidArgument, "shard assignment does not match the corpus");
    }
    shard_glossaries.resize(sa.n_shards);
    std::vector<std::vector<ColumnMetadata>> shard_columns(sa.n_shards);
    for (std::size_t i = 0; i < corpus.glossary.size(); ++i) {
      shard_glossaries.at(sa.glossary_shard[i]).push_back(corpus.glossary[i]);
    }
    for (std::size_t i = 0; i < corpus.columns.size(); ++i) {
      shard_columns.at(sa.column_shard[i]).push_back(corpus.columns[i]);
    }
    for (std::size_t s = 0; s < sa.n_shards; ++s) add_batches(shard_columns[s], &shard_glossaries[s]);
  } else {
    add_batches(corpus.columns, &corpus.glossary);
  }

  std::vector<RunOutcome> outcomes;
  outcomes.reserve(static_cast<std::size_t>(config.repetitions));
  for (int rep = 0; rep < config.repetitions; ++rep) {
    const auto dir = options.archive_root.empty() ? std::filesystem::path{} : archive_dir(options.archive_root, config, rep);
    std::vector<detail::BatchResult> results(batches.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
      for (;;) {
        const std::size_t b = next.fetch_add(1);
        if (b >= batches.size()) return;
        auto& r = results[b];
        ChatExchange ex;
        try {
          const auto bundle = render_prompts(batches[b].columns, *batches[b].glossary, round);
          chat_complete(config, bundle, round, client, ex);
          r.content = ex.content;
          r.parsed = parse_llm_response(r.content, batches[b].known_ids);
          r.ok = true;
        } catch (const Error& e) {
          r.reason = failure_reason(e);
        } catch (const std::exception& e) {
          r.reason = e.what();
        }
        if (!dir.empty()) {
          const auto stem = dir / std::to_string(b);
          if (!ex.request_body.empty()) write_file(stem.string() + ".request.json", detail::pretty_or_raw(ex.request_body));
          if (!ex.response_body.empty()) {
            write_file(stem.string() + ".response.json", detail::pretty_or_raw(ex.response_body));
          } else {
            nlohmann::ordered_json err;
            err["error"] = r.reason;
            write_file(stem.string() + ".response.json", err.dump(2) + "\n");
          }
        }
      }
    };

    const std::size_t n_threads = std::min<std::size_t>(batches.size(), static_cast<std::size_t>(std::max(1, config.max_in_flight)));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    RunOutcome outcome;
    outcome.requests = batches.size();
    for (std::size_t b = 0; b < results.size(); ++b) {
      if (!results[b].ok) {
        outcome = RunOutcome::failed("batch " + std::to_string(b) + ": " + results[b].reason);
        outcome.requests = batches.size();
        break;
      }
    }
    if (outcome.completed()) {
      std::unordered_map<std::string, RankedMapping> answered;
      for (std::size_t b = 0; b < results.size(); ++b) {
        outcome.raw_responses.push_back(results[b].content);
        std::unordered_set<std::string> in_batch;
        for (const auto& c : batches[b].columns) in_batch.insert(c.id);
        for (auto& m : results[b].parsed.mappings) {
          if (in_batch.count(m.column_id)) answered.try_emplace(m.column_id, std::move(m));
        }
      }
      for (const auto& c : corpus.columns) {
        auto it = answered.find(c.id);
        if (it == answered.end()) {
          outcome.unanswered.push_back(c.id);
        } else {
          outcome.mappings.push_back(std::move(it->second));
        }
      }
    }
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

inline std::string outcome_to_json(const RunOutcome& o) {
  nlohmann::ordered_json j;
  j["status"] = o.completed() ? "completed" : "failed";
  j["reason"] = o.failure_reason;
  j["requests"] = o.requests;
  j["n_mappings"] = o.mappings.size();
  j["unanswered"] = o.unanswered;
  return j.dump(2) + "\n";
}

}  // namespace cva
