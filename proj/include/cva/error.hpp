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

#include <stdexcept>
#include <string>
#include <string_view>

namespace cva {

enum class Errc {
  Io,
  MalformedJson,
  MissingField,
  DuplicateId,
  EmptyTruthSet,
  LineErrors,
  DimMismatch,
  EmptyIndex,
  BackendUnavailable,
  CacheCorrupt,
  EmptyBatch,
  ContextTooLarge,
  Timeout,
  RateLimited,
  HttpError,
  ModelRefusal,
  Unparseable,
  TooManyShards,
  InvalidArgument,
  PortInUse,
  UnknownCommand,
  InvalidFlag,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::Io: return "Io";
    case Errc::MalformedJson: return "MalformedJson";
    case Errc::MissingField: return "MissingField";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::EmptyTruthSet: return "EmptyTruthSet";
    case Errc::LineErrors: return "LineErrors";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::CacheCorrupt: return "CacheCorrupt";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ContextTooLarge: return "ContextTooLarge";
    case Errc::Timeout: return "Timeout";
    case Errc::RateLimited: return "RateLimited";
    case Errc::HttpError: return "HttpError";
    case Errc::ModelRefusal: return "ModelRefusal";
    case Errc::Unparseable: return "Unparseable";
    case Errc::TooManyShards: return "TooManyShards";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::PortInUse: return "PortInUse";
    case Errc::UnknownCommand: return "UnknownCommand";
    case Errc::InvalidFlag: return "InvalidFlag";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the categories above so
/// that the CLI can map it to an exit status and a stable error label.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cva
