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

#ifndef RANKSTOP_PHASE_ANALYSIS_H_
#define RANKSTOP_PHASE_ANALYSIS_H_

// Trajectory analytics for the watched token's rank.
//
// Micro level: a rank trajectory is split into four phases by fitting four
// independent least-squares lines to the smoothed readiness signal
// -log10(rank + 1) and choosing the three changepoints that minimize the
// total squared error (exact dynamic programming). The expected slope
// template in readiness terms is: falling, rising, flat, rising.
//
// Macro level: per-progress median log-rank across samples, the accuracy
// obtained by truncating every sample at a progress fraction, and the
// earliest fraction whose accuracy is within epsilon of full reasoning.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rankstop/eval.h"
#include "rankstop/record.h"

namespace rankstop::phase_analysis {

inline constexpr int64_t kDefaultSmoothingWindow = 9;
inline constexpr int64_t kDefaultGridSize = 100;
inline constexpr double kDefaultEpsilon = 1.0;

using RankTrajectory = std::vector<std::pair<int64_t, int64_t>>;

struct PhaseSegmentation {
  std::array<int64_t, 3> boundaries{};  // start indices of phases II, III, IV
  std::array<double, 3> confidence{};   // relative error reduction per boundary
  std::array<double, 4> slopes{};       // readiness slope per phase
  double total_error = 0.0;
  bool degenerate = false;              // slope template not matched

  bool operator==(const PhaseSegmentation&) const = default;
};

// Throws Error(kInsufficientData) when the trajectory is shorter than
// 8 * smoothing_window.
PhaseSegmentation SegmentPhases(const RankTrajectory& trajectory,
                                int64_t smoothing_window = kDefaultSmoothingWindow);

// Centered moving average; the window shrinks symmetrically at the edges.
std::vector<double> SmoothCentered(std::span<const double> values, int64_t window);

struct MacroCurve {
  std::vector<double> progress_grid;           // (j + 1) / grid_size
  std::vector<double> median_log_rank;         // median of log10(rank + 1)
  std::vector<int64_t> sample_count;
  std::vector<double> truncation_accuracy;     // percent; empty until filled
  int64_t exclusions = 0;                      // samples without gold
  std::pair<double, double> optimal_zone{0.0, 1.0};
  bool zone_flagged = false;
};

// Progress p maps to step round(p * (L - 1)) of a length-L trajectory.
// Throws Error(kEmptyInput) for an empty record set.
MacroCurve AggregateMacro(std::span<const GenerationRecord> records, int64_t grid_size);
MacroCurve AggregateMacro(std::span<const RankTrajectory> trajectories, int64_t grid_size);

// Accuracy per ratio, keyed by ratio in ascending order. Records are matched
// to gold answers by sample id; samples without gold are excluded and
// counted once each.
struct AccuracyCurve {
  std::vector<double> ratios;
  std::vector<double> accuracy;  // percent
  int64_t exclusions = 0;
};

AccuracyCurve TruncationAccuracyCurve(
    const std::map<double, std::vector<GenerationRecord>>& per_ratio,
    std::span<const eval::Sample> gold);

// Writes the accuracy component onto the curve's grid; every grid point must
// have a ratio within 1e-9. Throws Error(kConfig) otherwise.
void AttachAccuracy(MacroCurve& curve, const AccuracyCurve& accuracy);

// start = first grid fraction whose accuracy >= accuracy(1.0) - epsilon,
// end = 1.0. When only 1.0 qualifies the zone is (1.0, 1.0) and flagged.
std::pair<double, double> OptimalTruncationZone(MacroCurve& curve, double epsilon);

// 100 * (acc - baseline_acc) / (tokens - baseline_tokens): accuracy points per
// hundred extra tokens. Throws Error(kUndefinedRate) unless
// tokens > baseline_tokens.
double EfficiencyRate(double acc, double tokens, double baseline_acc, double baseline_tokens);

// Comma-separated tables with a header row.
std::string FormatMacroCurve(const MacroCurve& curve);
std::string FormatSegmentations(
    const std::vector<std::pair<std::string, PhaseSegmentation>>& rows);

}  // namespace rankstop::phase_analysis

#endif  // RANKSTOP_PHASE_ANALYSIS_H_
