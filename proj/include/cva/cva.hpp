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

// Umbrella header for the library (the CLI lives in cva/cli.hpp).

#include "cva/corpus.hpp"
#include "cva/embedding.hpp"
#include "cva/error.hpp"
#include "cva/evaluator.hpp"
#include "cva/llm_matcher.hpp"
#include "cva/manifest.hpp"
#include "cva/mock_llm.hpp"
#include "cva/partitioner.hpp"
#include "cva/ranker.hpp"
#include "cva/remote_embedding.hpp"
