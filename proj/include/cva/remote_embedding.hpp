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

// Client for a batch embedding service:
//   POST <base_url>/embed  {"model": ..., "texts": [...]}  ->  {"vectors": [[...], ...]}

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/http_util.hpp"

namespace cva {

struct RemoteEmbeddingConfig {
  std::string base_url;
  std::string model = "default";
  std::string api_key;
  std::size_t batch_size = 64;
  int max_in_flight = 4;
  std::size_t dim = 0;  // 0: learned from the first response
  http::PostOptions post;

  /// Fills url and key from CVA_EMBED_URL / CVA_EMBED_API_KEY when unset.
  void apply_env() {
    if (base_url.empty()) base_url = http::env_or("CVA_EMBED_URL");
    if (api_key.empty()) api_key = http::env_or("CVA_EMBED_API_KEY");
  }
};

class RemoteEmbeddingBackend final : public EmbeddingBackend {
 public:
  explicit RemoteEmbeddingBackend(RemoteEmbeddingConfig config)
      : config_(std::move(config)), endpoint_(http::parse_base_url(config_.base_url)), dim_(config_.dim) {
    config_.post.api_key = config_.api_key;
    if (config_.batch_size == 0) throw Error(Errc::InvalidArgument, "embedding batch size must be positive");
  }

  std::string name() const override { return "remote-" + config_.model; }

  std::size_t dim() const override {
    {
      std::lock_guard lock(mu_);
      if (dim_) return dim_;
    }
    // Probe once with a fixed text to learn the service dimension.
    auto v = const_cast<RemoteEmbeddingBackend*>(this)->embed_chunk(std::vector<std::string>{"dimension probe"});
    return v.front().dim();
  }

  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    if (texts.empty()) return out;
    const std::size_t n_chunks = (texts.size() + config_.batch_size - 1) / config_.batch_size;
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::optional<Error> first_error;

    auto worker = [&] {
      for (;;) {
        const std::size_t c = next.fetch_add(1);
        if (c >= n_chunks) return;
        {
          std::lock_guard lock(err_mu);
          if (first_error) return;
        }
        const std::size_t begin = c * config_.batch_size;
        const std::size_t end = std::min(texts.size(), begin + config_.batch_size);
        try {
          auto vecs = embed_chunk(std::vector<std::string>(texts.begin() + begin, texts.begin() + end));
          for (std::size_t i = begin; i < end; ++i) out[i] = std::move(vecs[i - begin]);
        } catch (const Error& e) {
          std::lock_guard lock(err_mu);
          if (!first_error) first_error = e;
        }
      }
    };

    const std::size_t n_threads = std::min<std::size_t>(n_chunks, std::max(1, config_.max_in_flight));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_error) throw *first_error;
    return out;
  }

 private:
  std::vector<EmbeddingVector> embed_chunk(const std::vector<std::string>& texts) {
    nlohmann::json req = {{"model", config_.model}, {"texts", texts}};
    auto res = http::post_json(endpoint_, "/embed", req.dump(), config_.post);
    if (!res.ok()) throw Error(Errc::BackendUnavailable, "embedding service: " + res.failure);

    auto j = nlohmann::json::parse(res.body, nullptr, false);
    if (j.is_discarded() || !j.contains("vectors") || !j["vectors"].is_array()) {
      throw Error(Errc::BackendUnavailable, "embedding service returned a malformed body");
    }
    const auto& arr = j["vectors"];
    if (arr.size() != texts.size()) {
      throw Error(Errc::BackendUnavailable, "embedding service returned " + std::to_string(arr.size()) +
                                                " vectors for " + std::to_string(texts.size()) + " texts");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(arr.size());
    for (const auto& row : arr) {
      if (!row.is_array() || !std::all_of(row.begin(), row.end(), [](const auto& x) { return x.is_number(); })) {
        throw Error(Errc::BackendUnavailable, "embedding service returned a non-numeric vector");
      }
      EmbeddingVector v(row.get<std::vector<double>>());
      if (v.dim() == 0 || !v.all_finite()) throw Error(Errc::BackendUnavailable, "embedding service returned a bad vector");
      std::lock_guard lock(mu_);
      if (dim_ == 0) dim_ = v.dim();
      if (v.dim() != dim_) {
        throw Error(Errc::DimMismatch, "embedding service dim " + std::to_string(v.dim()) + ", expected " +
                                           std::to_string(dim_));
      }
      out.push_back(std::move(v));
    }
    return out;
  }

  RemoteEmbeddingConfig config_;
  http::Endpoint endpoint_;
  mutable std::mutex mu_;
  mutable std::size_t dim_;
};

}  // namespace cva
