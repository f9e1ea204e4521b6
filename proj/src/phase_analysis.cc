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

#include "rankstop/phase_analysis.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_map>

#include "json_util.h"
#include "rankstop/error.h"

namespace rankstop::phase_analysis {
namespace {

constexpr int kSegments = 4;
constexpr int64_t kMinSegmentLength = 3;
// Phase III counts as flat when its slope is under this fraction of the
// weakest of the other three.
constexpr double kFlatSlopeFraction = 0.5;

// O(1) least-squares line fits over index ranges via prefix sums.
class LineFitter {
 public:
  explicit LineFitter(std::span<const double> y) : n_(y.size()) {
    sx_.assign(n_ + 1, 0);
    sxx_.assign(n_ + 1, 0);
    sy_.assign(n_ + 1, 0);
    syy_.assign(n_ + 1, 0);
    sxy_.assign(n_ + 1, 0);
    for (size_t i = 0; i < n_; ++i) {
      const long double x = static_cast<long double>(i);
      const long double v = y[i];
      sx_[i + 1] = sx_[i] + x;
      sxx_[i + 1] = sxx_[i] + x * x;
      sy_[i + 1] = sy_[i] + v;
      syy_[i + 1] = syy_[i] + v * v;
      sxy_[i + 1] = sxy_[i] + x * v;
    }
  }

  struct Fit {
    double sse = 0.0;
    double slope = 0.0;
  };

  // Segment [a, b).
  Fit operator()(size_t a, size_t b) const {
    const long double n = static_cast<long double>(b - a);
    const long double sx = sx_[b] - sx_[a];
    const long double sy = sy_[b] - sy_[a];
    const long double cxx = (sxx_[b] - sxx_[a]) - sx * sx / n;
    const long double cxy = (sxy_[b] - sxy_[a]) - sx * sy / n;
    const long double cyy = (syy_[b] - syy_[a]) - sy * sy / n;
    Fit fit;
    if (cxx > 0) {
      fit.slope = static_cast<double>(cxy / cxx);
      fit.sse = static_cast<double>(std::max<long double>(0, cyy - cxy * cxy / cxx));
    } else {
      fit.sse = static_cast<double>(std::max<long double>(0, cyy));
    }
    return fit;
  }

 private:
  size_t n_;
  std::vector<long double> sx_, sxx_, sy_, syy_, sxy_;
};

double Median(std::vector<double>& values) {
  const size_t n = values.size();
  const size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

std::vector<double> SmoothCentered(std::span<const double> values, int64_t window) {
  const int64_t n = static_cast<int64_t>(values.size());
  const int64_t half = std::max<int64_t>(0, window / 2);
  std::vector<double> prefix(values.size() + 1, 0.0);
  for (size_t i = 0; i < values.size(); ++i) prefix[i + 1] = prefix[i] + values[i];
  std::vector<double> out(values.size());
  for (int64_t i = 0; i < n; ++i) {
    const int64_t reach = std::min({half, i, n - 1 - i});
    const int64_t lo = i - reach;
    const int64_t hi = i + reach + 1;
    out[static_cast<size_t>(i)] =
        (prefix[static_cast<size_t>(hi)] - prefix[static_cast<size_t>(lo)]) /
        static_cast<double>(hi - lo);
  }
  return out;
}

PhaseSegmentation SegmentPhases(const RankTrajectory& trajectory, int64_t smoothing_window) {
  if (smoothing_window < 1) throw Error(ErrorCode::kConfig, "smoothing window must be >= 1");
  const int64_t length = static_cast<int64_t>(trajectory.size());
  if (length < 8 * smoothing_window || length < kSegments * kMinSegmentLength) {
    throw Error(ErrorCode::kInsufficientData,
                "trajectory of length " + std::to_string(length) + " is shorter than 8 x window (" +
                    std::to_string(8 * smoothing_window) + ")");
  }
  std::vector<double> readiness(trajectory.size());
  for (size_t i = 0; i < trajectory.size(); ++i) {
    readiness[i] = -std::log10(static_cast<double>(trajectory[i].second) + 1.0);
  }
  const std::vector<double> y = SmoothCentered(readiness, smoothing_window);
  const LineFitter fit(y);

  // cost[k][j]: best error covering [0, j) with k + 1 segments.
  const size_t n = y.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> cost(kSegments, std::vector<double>(n + 1, inf));
  std::vector<std::vector<size_t>> arg(kSegments, std::vector<size_t>(n + 1, 0));
  const size_t m = kMinSegmentLength;
  for (size_t j = m; j <= n; ++j) cost[0][j] = fit(0, j).sse;
  for (int k = 1; k < kSegments; ++k) {
    for (size_t j = (k + 1) * m; j <= n; ++j) {
      double best = inf;
      size_t best_i = 0;
      for (size_t i = k * m; i + m <= j; ++i) {
        const double prev = cost[k - 1][i];
        if (prev == inf) continue;
        const double c = prev + fit(i, j).sse;
        if (c < best) {
          best = c;
          best_i = i;
        }
      }
      cost[k][j] = best;
      arg[k][j] = best_i;
    }
  }

  PhaseSegmentation seg;
  seg.total_error = cost[kSegments - 1][n];
  size_t end = n;
  for (int k = kSegments - 1; k >= 1; --k) {
    const size_t start = arg[k][end];
    seg.boundaries[static_cast<size_t>(k - 1)] = static_cast<int64_t>(start);
    end = start;
  }
  const std::array<size_t, 5> edges{0, static_cast<size_t>(seg.boundaries[0]),
                                    static_cast<size_t>(seg.boundaries[1]),
                                    static_cast<size_t>(seg.boundaries[2]), n};
  std::array<LineFitter::Fit, 4> fits;
  for (int k = 0; k < kSegments; ++k) {
    fits[static_cast<size_t>(k)] = fit(edges[static_cast<size_t>(k)], edges[static_cast<size_t>(k) + 1]);
    seg.slopes[static_cast<size_t>(k)] = fits[static_cast<size_t>(k)].slope;
  }
  for (size_t b = 0; b < 3; ++b) {
    const double merged = fit(edges[b], edges[b + 2]).sse;
    const double split = fits[b].sse + fits[b + 1].sse;
    seg.confidence[b] = merged > 0 ? std::clamp((merged - split) / merged, 0.0, 1.0) : 0.0;
  }
  const auto& s = seg.slopes;
  const double weakest = std::min({std::abs(s[0]), std::abs(s[1]), std::abs(s[3])});
  const bool matches = s[0] < 0 && s[1] > 0 && s[3] > 0 &&
                       std::abs(s[2]) < kFlatSlopeFraction * weakest;
  seg.degenerate = !matches;
  return seg;
}

MacroCurve AggregateMacro(std::span<const RankTrajectory> trajectories, int64_t grid_size) {
  if (grid_size < 1) throw Error(ErrorCode::kConfig, "grid size must be >= 1");
  std::vector<const RankTrajectory*> usable;
  for (const RankTrajectory& t : trajectories) {
    if (!t.empty()) usable.push_back(&t);
  }
  if (usable.empty()) throw Error(ErrorCode::kEmptyInput, "no trajectories to aggregate");

  MacroCurve curve;
  const size_t g = static_cast<size_t>(grid_size);
  curve.progress_grid.resize(g);
  curve.median_log_rank.resize(g);
  curve.sample_count.assign(g, static_cast<int64_t>(usable.size()));
  std::vector<double> column(usable.size());
  for (size_t j = 0; j < g; ++j) {
    const double p = static_cast<double>(j + 1) / static_cast<double>(grid_size);
    curve.progress_grid[j] = p;
    for (size_t s = 0; s < usable.size(); ++s) {
      const RankTrajectory& traj = *usable[s];
      const auto idx = static_cast<size_t>(std::llround(p * static_cast<double>(traj.size() - 1)));
      column[s] = std::log10(static_cast<double>(traj[idx].second) + 1.0);
    }
    curve.median_log_rank[j] = Median(column);
  }
  return curve;
}

MacroCurve AggregateMacro(std::span<const GenerationRecord> records, int64_t grid_size) {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no records to aggregate");
  std::vector<RankTrajectory> trajectories;
  trajectories.reserve(records.size());
  for (const GenerationRecord& r : records) trajectories.push_back(r.rank_trajectory);
  return AggregateMacro(std::span<const RankTrajectory>(trajectories), grid_size);
}

AccuracyCurve TruncationAccuracyCurve(
    const std::map<double, std::vector<GenerationRecord>>& per_ratio,
    std::span<const eval::Sample> gold) {
  std::unordered_map<std::string, const eval::Sample*> by_id;
  for (const eval::Sample& s : gold) by_id.emplace(s.id, &s);
  AccuracyCurve curve;
  std::set<std::string> excluded;
  for (const auto& [ratio, records] : per_ratio) {
    int64_t scored = 0;
    int64_t correct = 0;
    for (const GenerationRecord& r : records) {
      const auto it = by_id.find(r.sample_id);
      if (it == by_id.end() || it->second->gold.empty()) {
        excluded.insert(r.sample_id);
        continue;
      }
      ++scored;
      if (r.complete && eval::IsCorrect(r.normalized_answer, *it->second)) ++correct;
    }
    curve.ratios.push_back(ratio);
    curve.accuracy.push_back(scored > 0 ? 100.0 * static_cast<double>(correct) /
                                              static_cast<double>(scored)
                                        : 0.0);
  }
  curve.exclusions = static_cast<int64_t>(excluded.size());
  return curve;
}

void AttachAccuracy(MacroCurve& curve, const AccuracyCurve& accuracy) {
  curve.truncation_accuracy.assign(curve.progress_grid.size(), 0.0);
  for (size_t j = 0; j < curve.progress_grid.size(); ++j) {
    const double p = curve.progress_grid[j];
    const auto it = std::find_if(accuracy.ratios.begin(), accuracy.ratios.end(),
                                 [&](double r) { return std::abs(r - p) <= 1e-9; });
    if (it == accuracy.ratios.end()) {
      curve.truncation_accuracy.clear();
      throw Error(ErrorCode::kConfig, "no truncation run at progress " + internal::FormatReal(p));
    }
    curve.truncation_accuracy[j] =
        accuracy.accuracy[static_cast<size_t>(it - accuracy.ratios.begin())];
  }
  curve.exclusions = accuracy.exclusions;
}

std::pair<double, double> OptimalTruncationZone(MacroCurve& curve, double epsilon) {
  const auto& grid = curve.progress_grid;
  const auto& acc = curve.truncation_accuracy;
  if (acc.empty() || acc.size() != grid.size()) {
    throw Error(ErrorCode::kConfig, "truncation accuracy not populated");
  }
  if (std::abs(grid.back() - 1.0) > 1e-9) {
    throw Error(ErrorCode::kConfig, "progress grid must end at 1.0");
  }
  const double full = acc.back();
  size_t start = grid.size() - 1;
  for (size_t j = 0; j < grid.size(); ++j) {
    if (acc[j] >= full - epsilon) {
      start = j;
      break;
    }
  }
  curve.zone_flagged = start == grid.size() - 1;
  curve.optimal_zone = {curve.zone_flagged ? 1.0 : grid[start], 1.0};
  return curve.optimal_zone;
}

double EfficiencyRate(double acc, double tokens, double baseline_acc, double baseline_tokens) {
  if (!(tokens > baseline_tokens)) {
    throw Error(ErrorCode::kUndefinedRate,
                "efficiency rate undefined unless tokens exceed the baseline's");
  }
  return 100.0 * (acc - baseline_acc) / (tokens - baseline_tokens);
}

std::string FormatMacroCurve(const MacroCurve& curve) {
  std::string out = "progress,median_log_rank,sample_count,truncation_accuracy\n";
  for (size_t j = 0; j < curve.progress_grid.size(); ++j) {
    out += internal::FormatReal(curve.progress_grid[j]) + ',' +
           internal::FormatReal(curve.median_log_rank[j]) + ',' +
           std::to_string(curve.sample_count[j]) + ',' +
           (j < curve.truncation_accuracy.size() ? internal::FormatReal(curve.truncation_accuracy[j])
                                                 : std::string()) +
           '\n';
  }
  return out;
}

std::string FormatSegmentations(
    const std::vector<std::pair<std::string, PhaseSegmentation>>& rows) {
  std::string out =
      "sample_id,b1,b2,b3,confidence1,confidence2,confidence3,slope1,slope2,slope3,slope4,"
      "degenerate\n";
  for (const auto& [id, s] : rows) {
    out += id;
    for (int64_t b : s.boundaries) out += ',' + std::to_string(b);
    for (double c : s.confidence) out += ',' + internal::FormatReal(c);
    for (double sl : s.slopes) out += ',' + internal::FormatReal(sl);
    out += s.degenerate ? ",1\n" : ",0\n";
  }
  return out;
}

}  // namespace rankstop::phase_analysis
