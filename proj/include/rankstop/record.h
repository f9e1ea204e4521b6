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

#ifndef RANKSTOP_RECORD_H_
#define RANKSTOP_RECORD_H_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rankstop/policy.h"

namespace rankstop {

enum class TaskKind { kNumeric, kMultipleChoice, kFreeform };

std::string_view TaskKindName(TaskKind kind);
std::optional<TaskKind> ParseTaskKind(std::string_view name);

enum class PolicyKind { kSyncThink, kFull, kNone, kFixedRatio, kAnswerConvergence };

std::string_view PolicyKindName(PolicyKind kind);
std::optional<PolicyKind> ParsePolicyKind(std::string_view name);

// Everything that determines a run's behaviour; snapshotted into each record.
struct RunConfig {
  PolicyKind policy = PolicyKind::kSyncThink;
  policy::PolicyConfig policy_config;
  policy::BaselineConfig baseline;
  int64_t max_new_tokens = 8192;
  TaskKind task_kind = TaskKind::kNumeric;
  std::string probe_suffix = "\nFinal answer:";

  // "syncthink", "full", "none", "fixed_ratio@0.25", "answer_convergence".
  std::string PolicyName() const;

  bool operator==(const RunConfig&) const = default;
};

struct Timing {
  double t_gen = 0.0;
  double t_metric = 0.0;
  double t_eval = 0.0;
  double t_total = 0.0;

  bool operator==(const Timing&) const = default;
};

struct GenerationRecord {
  std::string sample_id;
  std::string policy_name;
  RunConfig config;
  std::optional<int64_t> full_length;

  int64_t reasoning_tokens = 0;
  int64_t answer_tokens = 0;
  int64_t total_tokens = 0;

  // Decisions at every step where the rule was evaluated, then the final one.
  std::vector<policy::StopDecision> trail;
  policy::StopDecision final_decision;
  int64_t stop_step = -1;
  bool injected = false;

  std::vector<std::pair<int64_t, int64_t>> rank_trajectory;
  std::vector<std::pair<int64_t, double>> entropy_trajectory;

  std::string answer_text;
  std::string normalized_answer;
  Timing timing;

  bool complete = true;
  std::string error;

  bool operator==(const GenerationRecord&) const = default;
};

// One line, no trailing newline. Reals carry 17 significant digits.
std::string SerializeRecord(const GenerationRecord& record);
GenerationRecord ParseRecord(std::string_view line);

std::string SerializeRecords(const std::vector<GenerationRecord>& records);
std::vector<GenerationRecord> ReadRecordsFile(const std::string& path);
void WriteRecordsFile(const std::vector<GenerationRecord>& records, const std::string& path);

}  // namespace rankstop

#endif  // RANKSTOP_RECORD_H_
