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

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "cva/error.hpp"

namespace cva {

inline constexpr std::uint64_t kFnvOffset64 = 14695981039346656037ull;
inline constexpr std::uint64_t kFnvPrime64 = 1099511628211ull;
inline constexpr std::uint32_t kFnvOffset32 = 2166136261u;
inline constexpr std::uint32_t kFnvPrime32 = 16777619u;

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = kFnvOffset64) {
  for (char c : bytes) {
    hash ^= static_cast<std::uint8_t>(c);
    hash *= kFnvPrime64;
  }
  return hash;
}

constexpr std::uint32_t fnv1a32(std::string_view bytes, std::uint32_t hash = kFnvOffset32) {
  for (char c : bytes) {
    hash ^= static_cast<std::uint8_t>(c);
    hash *= kFnvPrime32;
  }
  return hash;
}

inline std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path.string());
}

inline void append_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::Io, "cannot append to " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::string hash_file(const std::filesystem::path& path) {
  return to_hex(fnv1a64(read_file(path)));
}

}  // namespace cva
