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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "fixtures.h"
#include "rankstop/error.h"
#include "rankstop/phase_analysis.h"

namespace rankstop::phase_analysis {
namespace {

using testing::SyntheticTrace;

RankTrajectory Trajectory(const stream::TraceFile& tr) {
  RankTrajectory out;
  for (const auto& s : tr.steps) out.emplace_back(s.t, s.watched_rank);
  return out;
}

TEST_CASE("planted boundaries are recovered") {
  stream::SyntheticPhaseSpec spec;
  const auto planted = spec.boundaries();
  const double tol = 0.05 * static_cast<double>(spec.length());
  int recovered = 0;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const PhaseSegmentation seg = SegmentPhases(Trajectory(SyntheticTrace(seed, spec)));
    bool ok = !seg.degenerate;
    for (size_t b = 0; b < 3; ++b) {
      ok = ok && std::abs(static_cast<double>(seg.boundaries[b] - planted[b])) <= tol;
    }
    recovered += ok ? 1 : 0;
    CHECK(seg.boundaries[0] > 0);
    CHECK(seg.boundaries[0] < seg.boundaries[1]);
    CHECK(seg.boundaries[1] < seg.boundaries[2]);
    CHECK(seg.boundaries[2] < spec.length());
    for (double c : seg.confidence) {
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
    }
  }
  CHECK(recovered >= 28);
}

TEST_CASE("segmentation degenerate and insufficient cases") {
  RankTrajectory flat;
  for (int64_t t = 0; t < 200; ++t) flat.emplace_back(t, 50);
  CHECK(SegmentPhases(flat).degenerate);

  RankTrajectory short_traj;
  for (int64_t t = 0; t < 10; ++t) short_traj.emplace_back(t, t);
  try {
    SegmentPhases(short_traj, 8);
    FAIL("expected insufficient data");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientData);
  }
}

TEST_CASE("centered smoothing") {
  const std::vector<double> v = {0, 0, 3, 0, 0};
  const auto s = SmoothCentered(v, 3);
  CHECK(s == std::vector<double>{0, 1, 1, 1, 0});
  CHECK(SmoothCentered(v, 1) == v);
}

TEST_CASE("macro median curve") {
  RankTrajectory a, b;
  for (int64_t t = 0; t < 11; ++t) {
    a.emplace_back(t, 9);
    b.emplace_back(t, 9);
  }
  std::vector<RankTrajectory> two = {a, b};
  const MacroCurve c = AggregateMacro(std::span<const RankTrajectory>(two), 10);
  REQUIRE(c.progress_grid.size() == 10);
  CHECK(c.progress_grid.back() == 1.0);
  for (double m : c.median_log_rank) CHECK(m == doctest::Approx(1.0));

  // A single sample's curve is its own resampling.
  RankTrajectory ramp;
  for (int64_t t = 0; t < 101; ++t) ramp.emplace_back(t, t);
  std::vector<RankTrajectory> one = {ramp};
  const MacroCurve r = AggregateMacro(std::span<const RankTrajectory>(one), 4);
  CHECK(r.median_log_rank[0] == doctest::Approx(std::log10(26.0)));
  CHECK(r.median_log_rank[3] == doctest::Approx(std::log10(101.0)));

  CHECK_THROWS_AS(AggregateMacro(std::span<const GenerationRecord>(), 10), Error);
}

TEST_CASE("median over synthetic samples equals a direct per-point median") {
  std::vector<RankTrajectory> trajs;
  for (uint64_t seed = 0; seed < 50; ++seed) trajs.push_back(Trajectory(SyntheticTrace(seed)));
  const MacroCurve c = AggregateMacro(std::span<const RankTrajectory>(trajs), 100);
  for (size_t j = 0; j < 100; ++j) {
    std::vector<double> col;
    for (const auto& t : trajs) {
      const size_t idx = static_cast<size_t>(std::llround(c.progress_grid[j] * double(t.size() - 1)));
      col.push_back(std::log10(double(t[idx].second) + 1.0));
    }
    std::sort(col.begin(), col.end());
    CHECK(c.median_log_rank[j] == doctest::Approx(0.5 * (col[24] + col[25])).epsilon(1e-12));
  }
  // Mid-reasoning sits in the plateau band.
  CHECK(c.median_log_rank[50] >= 2.5 - 0.05);
  CHECK(c.median_log_rank[50] <= 3.5 + 0.05);
}

TEST_CASE("median robustness to one perturbed sample") {
  std::mt19937_64 rng(9);
  std::vector<RankTrajectory> trajs;
  for (uint64_t seed = 0; seed < 9; ++seed) trajs.push_back(Trajectory(SyntheticTrace(seed)));
  const MacroCurve base = AggregateMacro(std::span<const RankTrajectory>(trajs), 20);
  auto perturbed = trajs;
  for (auto& [t, r] : perturbed[4]) r = static_cast<int64_t>(rng() % 100000);
  const MacroCurve moved = AggregateMacro(std::span<const RankTrajectory>(perturbed), 20);
  for (size_t j = 0; j < 20; ++j) {
    std::vector<double> col;
    for (const auto& t : trajs) {
      const size_t idx = static_cast<size_t>(std::llround(base.progress_grid[j] * double(t.size() - 1)));
      col.push_back(std::log10(double(t[idx].second) + 1.0));
    }
    std::sort(col.begin(), col.end());
    CHECK(moved.median_log_rank[j] >= col[3] - 1e-12);
    CHECK(moved.median_log_rank[j] <= col[5] + 1e-12);
  }
}

MacroCurve CurveWith(std::vector<double> acc) {
  MacroCurve c;
  for (size_t j = 0; j < acc.size(); ++j) c.progress_grid.push_back(double(j + 1) / double(acc.size()));
  c.truncation_accuracy = std::move(acc);
  return c;
}

TEST_CASE("optimal truncation zone") {
  MacroCurve plateau = CurveWith({10, 20, 30, 40, 50, 80, 80, 80, 80, 80});
  CHECK(OptimalTruncationZone(plateau, 1.0) == std::pair<double, double>(0.6, 1.0));
  CHECK_FALSE(plateau.zone_flagged);
  MacroCurve flat = CurveWith({50, 50, 50, 50});
  CHECK(OptimalTruncationZone(flat, 1.0).first == 0.25);
  MacroCurve late = CurveWith({0, 0, 0, 100});
  CHECK(OptimalTruncationZone(late, 1.0) == std::pair<double, double>(1.0, 1.0));
  CHECK(late.zone_flagged);
  MacroCurve empty;
  CHECK_THROWS_AS(OptimalTruncationZone(empty, 1.0), Error);
}

TEST_CASE("zone start never grows with epsilon") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> acc(20);
    for (auto& a : acc) a = double(rng() % 101);
    MacroCurve c = CurveWith(acc);
    double prev = 2.0;
    for (double eps : {0.0, 1.0, 5.0, 20.0, 100.0}) {
      const double start = OptimalTruncationZone(c, eps).first;
      CHECK(start <= prev);
      prev = start;
    }
  }
}

TEST_CASE("truncation accuracy curve from fixed-ratio replays") {
  // Probe answers saturate at progress between 0.3 and 0.6 across 20
  // samples, so truncation accuracy first matches full reasoning at 0.6.
  std::vector<stream::TraceFile> traces;
  std::vector<eval::Sample> gold;
  for (int i = 0; i < 20; ++i) {
    stream::SyntheticPhaseSpec spec;
    spec.seed = static_cast<uint64_t>(100 + i);
    spec.probe_interval = 4;
    spec.saturation = std::min(0.6, 0.3 + 0.3 * i / 19.0);
    traces.push_back(stream::GenerateSynthetic(spec));
    gold.push_back({"s" + std::to_string(i), "q", spec.gold, TaskKind::kNumeric, "synthetic"});
  }
  gold.push_back({"unused", "q", "", TaskKind::kNumeric, "synthetic"});
  std::map<double, std::vector<GenerationRecord>> per_ratio;
  MacroCurve curve;
  for (int j = 1; j <= 20; ++j) {
    const double p = j / 20.0;
    RunConfig cfg = testing::MakeConfig(PolicyKind::kFixedRatio);
    cfg.baseline.ratio = p;
    for (size_t i = 0; i < traces.size(); ++i) {
      per_ratio[p].push_back(testing::Replay(traces[i], cfg, "s" + std::to_string(i)));
    }
  }
  per_ratio[1.0].push_back(testing::Replay(traces[0], testing::MakeConfig(PolicyKind::kFull), "ghost"));
  const AccuracyCurve acc = TruncationAccuracyCurve(per_ratio, gold);
  CHECK(acc.exclusions == 1);
  CHECK(acc.accuracy.back() == 100.0);
  // Hand count at 0.5: stop at step 150 answers from the branch at 148
  // (progress 0.493), gold for saturation <= 0.493, i.e. i = 0..12.
  CHECK(acc.accuracy[9] == doctest::Approx(65.0));
  curve.progress_grid.clear();
  for (int j = 1; j <= 20; ++j) curve.progress_grid.push_back(j / 20.0);
  AttachAccuracy(curve, acc);
  const auto zone = OptimalTruncationZone(curve, 1.0);
  CHECK(zone.first == doctest::Approx(0.6));
  CHECK(zone.second == 1.0);

  MacroCurve mismatched;
  mismatched.progress_grid = {0.33, 1.0};
  CHECK_THROWS_AS(AttachAccuracy(mismatched, acc), Error);
}

TEST_CASE("efficiency rate") {
  CHECK(std::abs(EfficiencyRate(61.22, 2141, 58.85, 378) - 0.13) <= 0.01);
  CHECK(std::abs(EfficiencyRate(62.00, 671, 58.85, 378) - 1.08) <= 0.01);
  CHECK(EfficiencyRate(58.85, 900, 58.85, 378) == 0.0);
  CHECK(EfficiencyRate(50, 900, 58.85, 378) < 0.0);
  try {
    EfficiencyRate(70, 378, 58.85, 378);
    FAIL("expected undefined rate");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUndefinedRate);
  }
}

TEST_CASE("tabular emission") {
  MacroCurve c = CurveWith({1, 2});
  c.median_log_rank = {0.5, 0.25};
  c.sample_count = {3, 3};
  const std::string text = FormatMacroCurve(c);
  CHECK(text.find('\n') != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  PhaseSegmentation seg;
  seg.boundaries = {1, 2, 3};
  const std::string segs = FormatSegmentations({{"a", seg}, {"b", seg}});
  CHECK(std::count(segs.begin(), segs.end(), '\n') == 3);
}

}  // namespace
}  // namespace rankstop::phase_analysis
