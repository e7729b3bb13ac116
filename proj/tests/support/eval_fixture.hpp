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

#include <string>
#include <vector>

#include "cva/corpus.hpp"
#include "cva/ranker.hpp"

namespace cva::testing {

/// Nine columns with hand-placed correct ids:
///   c1..c5  correct id at rank 1          -> 5 hits@1
///   c6      correct id at rank 3          -> hit@5 only
///   c7      correct id at rank 5          -> hit@5 only
///   c8      correct id at rank 6          -> miss (beyond five)
///   c9      no prediction                 -> miss
/// hit@1 = 5/9, hit@5 = 7/9.
struct NineColumnFixture {
  GroundTruth truth;
  std::vector<RankedMapping> mappings;
};

inline RankedMapping ranked(std::string col, std::vector<std::string> ids) {
  RankedMapping m{std::move(col), {}};
  for (auto& id : ids) m.ranked.push_back({std::move(id), std::nullopt});
  return m;
}

inline NineColumnFixture nine_column_fixture() {
  NineColumnFixture f;
  for (int i = 1; i <= 9; ++i) f.truth.truth["c" + std::to_string(i)] = {"T" + std::to_string(i)};
  for (int i = 1; i <= 5; ++i) {
    f.mappings.push_back(ranked("c" + std::to_string(i), {"T" + std::to_string(i), "x", "y"}));
  }
  f.mappings.push_back(ranked("c6", {"a", "b", "T6", "c", "d"}));
  f.mappings.push_back(ranked("c7", {"a", "b", "c", "d", "T7"}));
  f.mappings.push_back(ranked("c8", {"a", "b", "c", "d", "e", "T8"}));
  return f;
}

}  // namespace cva::testing
