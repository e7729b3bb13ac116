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

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>

#include "cva/error.hpp"

namespace cva::http {

/// "http://host:8080/prefix" split into the part httplib::Client wants and
/// a path prefix that is prepended to every request path.
struct Endpoint {
  std::string origin;
  std::string path_prefix;

  std::string path(const std::string& suffix) const { return path_prefix + suffix; }
};

inline Endpoint parse_base_url(std::string url) {
  if (url.empty()) throw Error(Errc::InvalidArgument, "empty base URL");
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) url = "http://" + url;
  const auto host_begin = url.find("://") + 3;
  const auto slash = url.find('/', host_begin);
  if (slash == std::string::npos) return {url, ""};
  return {url.substr(0, slash), url.substr(slash)};
}

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};

  std::chrono::milliseconds backoff(int attempt) const {
    double ms = static_cast<double>(initial_backoff.count());
    for (int i = 0; i < attempt; ++i) ms *= multiplier;
    return std::chrono::milliseconds(
        static_cast<long long>(std::min(ms, static_cast<double>(max_backoff.count()))));
  }
};

/// Spaces request starts at least `min_interval` apart across threads.
class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::milliseconds min_interval = std::chrono::milliseconds{0})
      : min_interval_(min_interval) {}

  void acquire() {
    if (min_interval_.count() <= 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + min_interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::chrono::milliseconds min_interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

/// Counting gate bounding the number of requests in flight.
class InFlightGate {
 public:
  explicit InFlightGate(int limit) : available_(std::max(1, limit)) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int available_;
};

inline std::string env_or(const char* name, std::string fallback = {}) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

/// Outcome of a POST with retries. `failure` is empty on success.
struct PostResult {
  int status = 0;
  std::string body;
  Errc failure_code = Errc::HttpError;
  std::string failure;
  int attempts = 0;

  bool ok() const { return failure.empty(); }
};

struct PostOptions {
  std::string api_key;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
};

/// POSTs JSON, retrying on transport errors, 429 and 5xx with exponential
/// backoff. Other 4xx statuses fail immediately.
inline PostResult post_json(const Endpoint& endpoint, const std::string& path, const std::string& body,
                            const PostOptions& opts, RateLimiter* limiter = nullptr) {
  PostResult result;
  httplib::Client client(endpoint.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opts.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opts.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!opts.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts.api_key);

  for (int attempt = 0;; ++attempt) {
    if (limiter) limiter->acquire();
    ++result.attempts;
    auto res = client.Post(endpoint.path(path), headers, body, "application/json");
    bool retryable = false;
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
        result.failure_code = Errc::Timeout;
        result.failure = "timeout";
      } else {
        result.failure_code = Errc::BackendUnavailable;
        result.failure = "transport error: " + httplib::to_string(err);
      }
      retryable = true;
    } else if (res->status == 200) {
      result.status = res->status;
      result.body = res->body;
      result.failure.clear();
      return result;
    } else {
      result.status = res->status;
      result.body = res->body;
      if (res->status == 429) {
        result.failure_code = Errc::RateLimited;
        result.failure = "rate limited";
        retryable = true;
      } else {
        result.failure_code = Errc::HttpError;
        result.failure = "http " + std::to_string(res->status);
        retryable = res->status >= 500;
      }
    }
    if (!retryable || attempt >= opts.retry.max_retries) return result;
    std::this_thread::sleep_for(opts.retry.backoff(attempt));
  }
}

}  // namespace cva::http
