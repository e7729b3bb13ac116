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

// Scripted chat-completions endpoint for offline and CI runs. Besides
// /v1/chat/completions it serves /embed with the local trigram embedder.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/hashing.hpp"

namespace cva {

struct MockBehavior {
  enum class Kind { EchoValidMapping, InjectHallucinations, FailRate, Timeout, RateLimit };

  Kind kind = Kind::EchoValidMapping;
  double fail_probability = 0.0;         // fail-rate(p)
  int rate_limited_responses = 0;        // rate-limit(n): 429 for the first n sightings of a request
  std::chrono::milliseconds delay{5000};  // timeout(ms)
};

/// Parses "echo-valid-mapping", "inject-hallucinations", "fail-rate(0.25)",
/// "timeout" / "timeout(1500)" and "rate-limit(2)".
inline MockBehavior parse_mock_behavior(std::string_view spec) {
  auto t = detail::trim(spec);
  auto arg = [&](std::string_view name) -> std::string {
    if (t.size() < name.size() + 2 || t.substr(0, name.size()) != name || t[name.size()] != '(' || t.back() != ')') {
      return {};
    }
    return std::string(t.substr(name.size() + 1, t.size() - name.size() - 2));
  };
  MockBehavior b;
  try {
    if (t == "echo-valid-mapping") return b;
    if (t == "inject-hallucinations") {
      b.kind = MockBehavior::Kind::InjectHallucinations;
      return b;
    }
    if (t == "timeout") {
      b.kind = MockBehavior::Kind::Timeout;
      return b;
    }
    if (auto a = arg("fail-rate"); !a.empty()) {
      b.kind = MockBehavior::Kind::FailRate;
      b.fail_probability = std::stod(a);
      if (!(b.fail_probability >= 0.0 && b.fail_probability <= 1.0)) throw Error(Errc::InvalidArgument, "p not in [0,1]");
      return b;
    }
    if (auto a = arg("timeout"); !a.empty()) {
      b.kind = MockBehavior::Kind::Timeout;
      b.delay = std::chrono::milliseconds(std::stoll(a));
      return b;
    }
    if (auto a = arg("rate-limit"); !a.empty()) {
      b.kind = MockBehavior::Kind::RateLimit;
      b.rate_limited_responses = std::stoi(a);
      return b;
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
  }
  throw Error(Errc::InvalidArgument, "unknown mock behavior '" + std::string(t) + "'");
}

/// Behavior per model name, with a default for unlisted models.
struct MockScript {
  MockBehavior default_behavior;
  std::map<std::string, MockBehavior> per_model;
  std::uint64_t seed = 17;

  const MockBehavior& behavior_for(const std::string& model) const {
    auto it = per_model.find(model);
    return it == per_model.end() ? default_behavior : it->second;
  }
};

/// Accepts either a behavior spec or a path to a JSON script of the form
/// {"default": "echo-valid-mapping", "models": {"m": "fail-rate(1.0)"}, "seed": 17}.
inline MockScript load_mock_script(const std::string& spec_or_path, std::uint64_t seed) {
  MockScript script;
  script.seed = seed;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(spec_or_path, ec)) {
    script.default_behavior = parse_mock_behavior(spec_or_path);
    return script;
  }
  auto j = nlohmann::json::parse(read_file(spec_or_path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::MalformedJson, "mock script " + spec_or_path);
  if (j.contains("default")) script.default_behavior = parse_mock_behavior(j["default"].get<std::string>());
  if (j.contains("models")) {
    for (const auto& [model, spec] : j["models"].items()) script.per_model[model] = parse_mock_behavior(spec.get<std::string>());
  }
  if (j.contains("seed")) script.seed = j["seed"].get<std::uint64_t>();
  return script;
}

namespace detail {

struct MockRequestView {
  std::vector<GlossaryEntry> glossary;
  std::vector<ColumnMetadata> columns;
};

// The user message carries one glossary object per line and the metadata
// batch as a one-line JSON array.
inline MockRequestView read_user_content(const std::string& content) {
  MockRequestView view;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty() || (t.front() != '{' && t.front() != '[')) continue;
    auto j = nlohmann::json::parse(t, nullptr, false);
    if (j.is_discarded()) continue;
    if (j.is_object() && j.contains("id") && j.contains("label")) {
      try {
        view.glossary.push_back(parse_glossary_entry(t));
      } catch (const Error&) {
      }
    } else if (j.is_array()) {
      for (const auto& e : j) {
        try {
          view.columns.push_back(parse_column_metadata(e.dump()));
        } catch (const Error&) {
        }
      }
    }
  }
  return view;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Exact (case-insensitive) label matches first, then glossary order, five ids.
inline std::vector<std::string> plausible_ids(const ColumnMetadata& col, const std::vector<GlossaryEntry>& glossary) {
  std::vector<std::string> ids;
  const auto label = lower(col.label);
  for (const auto& g : glossary) {
    if (lower(g.label) == label) ids.push_back(g.id);
  }
  for (const auto& g : glossary) {
    if (ids.size() >= 5) break;
    if (std::find(ids.begin(), ids.end(), g.id) == ids.end()) ids.push_back(g.id);
  }
  if (ids.size() > 5) ids.resize(5);
  return ids;
}

inline std::string quoted_list(const std::vector<std::string>& ids) {
  std::string out = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ", ";
    out += "'" + ids[i] + "'";
  }
  return out + "]";
}

}  // namespace detail

class MockLlmServer {
 public:
  explicit MockLlmServer(MockScript script) : script_(std::move(script)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) { chat(req, res); });
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) { embed(req, res); });
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"status":"ok"})", "application/json");
    });
  }

  MockLlmServer(const MockLlmServer&) = delete;
  MockLlmServer& operator=(const MockLlmServer&) = delete;

  ~MockLlmServer() { stop(); }

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start(int port = 0, const std::string& host = "127.0.0.1") {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
      if (port_ < 0) throw Error(Errc::PortInUse, "cannot bind " + host);
    } else {
      if (!server_.bind_to_port(host, port)) throw Error(Errc::PortInUse, host + ":" + std::to_string(port));
      port_ = port;
    }
    stopping_ = false;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void serve(int port, const std::string& host = "127.0.0.1") {
    if (!server_.bind_to_port(host, port)) throw Error(Errc::PortInUse, host + ":" + std::to_string(port));
    port_ = port;
    server_.listen_after_bind();
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const { return requests_.load(); }

 private:
  void chat(const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("messages") || !body["messages"].is_array()) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    const std::string model = body.value("model", "");
    std::string user;
    for (const auto& m : body["messages"]) {
      if (m.value("role", "") == "user") user += m.value("content", "") + "\n";
    }
    const auto& behavior = script_.behavior_for(model);
    const std::uint64_t body_hash = fnv1a64(req.body);
    const int sighting = next_sighting(body_hash);

    using Kind = MockBehavior::Kind;
    if (behavior.kind == Kind::RateLimit && sighting < behavior.rate_limited_responses) {
      res.status = 429;
      res.set_content(R"({"error":{"message":"rate limited"}})", "application/json");
      return;
    }
    if (behavior.kind == Kind::Timeout) {
      std::unique_lock lock(mu_);
      cv_.wait_for(lock, behavior.delay, [&] { return stopping_; });
    }
    if (behavior.kind == Kind::FailRate) {
      std::uint64_t h = fnv1a64(std::to_string(script_.seed) + ":" + std::to_string(sighting), body_hash);
      const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
      if (u < behavior.fail_probability) {
        reply(res, model, body_hash, "failure");
        return;
      }
    }

    const auto view = detail::read_user_content(user);
    std::string content;
    std::size_t fake = 0;
    for (const auto& col : view.columns) {
      auto ids = detail::plausible_ids(col, view.glossary);
      if (behavior.kind == Kind::InjectHallucinations) {
        std::vector<std::string> noisy;
        noisy.push_back("http://example.org/hallucinated/" + std::to_string(fake++));
        for (const auto& id : ids) {
          noisy.push_back(id);
          noisy.push_back(id);
          noisy.push_back("made-up-term-" + std::to_string(fake++));
        }
        ids = std::move(noisy);
      }
      content += "'colID': '" + col.id + "', 'propID': " + detail::quoted_list(ids) + "\n";
    }
    if (behavior.kind == Kind::InjectHallucinations) content = "Here are the results:\n```\n" + content + "```\n";
    reply(res, model, body_hash, content);
  }

  void embed(const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("texts") || !body["texts"].is_array()) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    LocalHashBackend local;
    nlohmann::json vectors = nlohmann::json::array();
    for (const auto& t : body["texts"]) {
      const auto v = local.embed_one(t.is_string() ? t.get<std::string>() : std::string());
      vectors.push_back(std::vector<double>(v.values().begin(), v.values().end()));
    }
    res.set_content(nlohmann::json{{"vectors", vectors}}.dump(), "application/json");
  }

  int next_sighting(std::uint64_t key) {
    std::lock_guard lock(mu_);
    return sightings_[key]++;
  }

  static void reply(httplib::Response& res, const std::string& model, std::uint64_t body_hash,
                    const std::string& content) {
    nlohmann::ordered_json j;
    j["id"] = "mock-" + to_hex(body_hash);
    j["object"] = "chat.completion";
    j["model"] = model;
    j["choices"] = nlohmann::ordered_json::array(
        {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", "stop"}}});
    res.set_content(j.dump(), "application/json");
  }

  MockScript script_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::unordered_map<std::uint64_t, int> sightings_;
};

}  // namespace cva
