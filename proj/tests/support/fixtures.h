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

#ifndef RANKSTOP_TESTS_SUPPORT_FIXTURES_H_
#define RANKSTOP_TESTS_SUPPORT_FIXTURES_H_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rankstop/controller.h"
#include "rankstop/record.h"
#include "rankstop/stream.h"

namespace rankstop::testing {

inline stream::TraceFile SyntheticTrace(uint64_t seed, stream::SyntheticPhaseSpec spec = {}) {
  spec.seed = seed;
  return stream::GenerateSynthetic(spec);
}

inline RunConfig MakeConfig(PolicyKind kind, double lambda = 0.8, int64_t t_max = 512) {
  RunConfig c;
  c.policy = kind;
  c.policy_config.lambda = lambda;
  c.policy_config.t_max = t_max;
  c.policy_config.watched_token = stream::SyntheticPhaseSpec{}.watched_token;
  return c;
}

inline GenerationRecord Replay(const stream::TraceFile& trace, const RunConfig& config,
                               const std::string& id = "s") {
  stream::TraceStream source(std::make_shared<const stream::TraceFile>(trace));
  controller::LogicalClock clock;
  return controller::RunGeneration(source, id, config, clock);
}

// Everything that describes the outcome, leaving out the policy label and
// the config snapshot.
inline bool SameOutcome(const GenerationRecord& a, const GenerationRecord& b) {
  GenerationRecord x = a;
  GenerationRecord y = b;
  x.policy_name = y.policy_name = "";
  x.config = y.config = RunConfig{};
  return x == y;
}

}  // namespace rankstop::testing

#endif  // RANKSTOP_TESTS_SUPPORT_FIXTURES_H_
