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

#ifndef RANKSTOP_EVAL_H_
#define RANKSTOP_EVAL_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rankstop/record.h"

namespace rankstop::eval {

struct Sample {
  std::string id;
  std::string question;
  std::string gold;
  TaskKind task_kind = TaskKind::kNumeric;
  std::string source;

  bool operator==(const Sample&) const = default;
};

struct LineError {
  size_t line = 0;
  std::string message;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<LineError> errors;  // lines skipped with their reasons
};

// Line-delimited objects with id / question / gold, optional task_kind and
// source. Lines with missing fields are reported and skipped; a duplicate id
// throws Error(kLoad).
Dataset LoadDataset(const std::string& path, TaskKind default_kind,
                    const std::string& default_source = "");
Dataset ParseDataset(std::string_view text, TaskKind default_kind,
                     const std::string& default_source = "");

// Normalized answer for exact-match scoring. Total: unparseable text maps to
// the empty string, which never matches.
//
//   numeric          last number, currency/thousands separators/units
//                    stripped, canonical form ("1,250.50" -> "1250.5")
//   multiple_choice  letter from "Answer: X" / "answer is (X)", else the last
//                    "(X)", else a trailing standalone capital; uppercased
//   freeform         last non-empty line, whitespace collapsed, lowercased
std::string ParseAnswer(std::string_view text, TaskKind kind);

bool IsCorrect(const std::string& normalized_answer, const Sample& sample);

struct ReportRow {
  std::string dataset;
  std::string policy;
  int64_t samples = 0;
  int64_t correct = 0;
  int64_t incomplete = 0;
  double top1 = 0.0;  // percent
  double mean_tokens = 0.0;
  double mean_reasoning_tokens = 0.0;
  double mean_t_total = 0.0;
  double mean_t_gen = 0.0;
  double mean_t_metric = 0.0;
  double mean_t_eval = 0.0;
  double objective = 0.0;  // top1 - alpha_cost * mean_tokens
  std::optional<double> efficiency_rate;

  bool operator==(const ReportRow&) const = default;
};

struct BenchmarkReport {
  double alpha_cost = 0.0;
  std::vector<ReportRow> rows;  // sorted by (dataset, policy)

  // (mean tokens, top1) per row, in row order.
  std::vector<std::pair<double, double>> ParetoPoints() const;

  bool operator==(const BenchmarkReport&) const = default;
};

// Groups records by (sample source, policy name). Incomplete records count as
// wrong and are excluded from the means. Efficiency rates are taken against
// the "none" row of the same dataset when present. Throws Error(kScoring) for
// an empty record set or unresolvable sample ids.
BenchmarkReport Score(std::span<const GenerationRecord> records,
                      std::span<const Sample> samples, double alpha_cost = 0.0);

enum class ReportFormat { kTabular, kStructured };

std::string FormatReport(const BenchmarkReport& report, ReportFormat format);
BenchmarkReport ParseReport(std::string_view text, ReportFormat format);
// Throws Error(kEmit) on I/O failure.
void EmitReport(const BenchmarkReport& report, ReportFormat format, const std::string& path);

}  // namespace rankstop::eval

#endif  // RANKSTOP_EVAL_H_
