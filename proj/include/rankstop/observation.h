// Copyright 2026 The rankstop Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef RANKSTOP_OBSERVATION_H_
#define RANKSTOP_OBSERVATION_H_

#include <cstdint>
#include <string>
#include <vector>

namespace rankstop {

using TokenId = int64_t;

struct TokenLogprob {
  TokenId token = 0;
  double logprob = 0.0;  // nats

  bool operator==(const TokenLogprob&) const = default;
};

// Evidence for one decoding step. `t` counts steps since the reasoning phase
// began. watched_rank and entropy are precomputed by the source so replay
// never needs full-vocabulary logits.
struct StepObservation {
  int64_t t = 0;
  TokenId chosen_token = 0;
  std::string chosen_text;
  std::vector<TokenLogprob> topk;  // descending logprob, unique tokens
  int64_t watched_rank = 0;        // 0-indexed
  bool censored = false;
  double entropy = 0.0;            // nats
  double step_wall_time = 0.0;     // seconds

  bool operator==(const StepObservation&) const = default;
};

}  // namespace rankstop

#endif  // RANKSTOP_OBSERVATION_H_
