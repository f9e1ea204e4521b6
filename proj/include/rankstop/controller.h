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

#ifndef RANKSTOP_CONTROLLER_H_
#define RANKSTOP_CONTROLLER_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rankstop/record.h"
#include "rankstop/stream.h"

namespace rankstop::controller {

// Monotonic seconds. Sessions read the clock around generation, policy
// evaluation and answer scoring to fill the timing buckets.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double Now() = 0;
};

class SteadyClock final : public Clock {
 public:
  double Now() override;
};

// Advances by a fixed tick on every read. Makes timing fields reproducible,
// which is what tests and `--clock logical` runs need.
class LogicalClock final : public Clock {
 public:
  explicit LogicalClock(double tick = 1e-6) : tick_(tick) {}
  double Now() override;

 private:
  double tick_;
  int64_t reads_ = 0;
};

using ClockFactory = std::function<std::unique_ptr<Clock>()>;
ClockFactory SteadyClockFactory();
ClockFactory LogicalClockFactory(double tick = 1e-6);

// Runs one sample under one policy. The source is consumed.
//
// Errors from the source mid-run produce an incomplete record carrying the
// partial trajectories. Configuration problems throw Error(kConfig); an
// answer-convergence run on a source that cannot probe throws
// Error(kPolicyUnavailable).
GenerationRecord RunGeneration(stream::ObservationStream& source,
                               const std::string& sample_id, const RunConfig& config,
                               Clock& clock,
                               std::optional<int64_t> full_length = std::nullopt);

struct BatchItem {
  std::string sample_id;
  std::function<std::unique_ptr<stream::ObservationStream>()> open;
  std::optional<int64_t> full_length;
  std::optional<TaskKind> task_kind;  // overrides RunConfig::task_kind
};

// One record per (item, config), item-major in input order. Failures are
// captured in the record; the batch never aborts.
std::vector<GenerationRecord> RunBatch(std::span<const BatchItem> items,
                                       std::span<const RunConfig> configs, int parallelism,
                                       const ClockFactory& clock_factory = SteadyClockFactory());

}  // namespace rankstop::controller

#endif  // RANKSTOP_CONTROLLER_H_
