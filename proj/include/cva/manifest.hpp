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

#include <chrono>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cva/hashing.hpp"

namespace cva {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kManifestFile = "manifest.jsonl";

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one artifact-producing command. Appended as a single line to
/// <output dir>/manifest.jsonl; earlier lines are never rewritten.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json input_hashes = nlohmann::ordered_json::object();
  std::vector<std::string> outputs;
  std::string started_at = utc_timestamp();
  std::string finished_at;

  void add_input(const std::filesystem::path& path) {
    if (std::filesystem::is_regular_file(path)) input_hashes[path.string()] = hash_file(path);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["input_hashes"] = input_hashes;
    j["tool_version"] = kToolVersion;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["outputs"] = outputs;
    return j;
  }

  void append_to(const std::filesystem::path& dir) {
    if (finished_at.empty()) finished_at = utc_timestamp();
    append_file(dir / kManifestFile, to_json().dump() + "\n");
  }
};

}  // namespace cva
