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

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "rankstop/error.h"
#include "rankstop/stream.h"

namespace rankstop::stream {
namespace {

constexpr double kStepWallTime = 0.025;
// Phase I overshoots the floor so its end lies strictly beyond it.
constexpr double kDescentOvershoot = 0.25;
constexpr double kRecoveryNoise = 0.05;
constexpr double kPlateauStep = 0.12;
constexpr double kSpikeProbability = 0.04;
constexpr double kPlateauReversion = 0.2;
constexpr double kPlateauMargin = 0.25;

uint64_t SplitMix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Distribution helpers are spelled out rather than using <random>'s
// distributions, whose output is implementation-defined.
class Rng {
 public:
  Rng(uint64_t seed, uint64_t stream) : engine_(SplitMix(seed ^ SplitMix(stream))) {}

  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double Symmetric() { return 2.0 * Uniform() - 1.0; }
  uint64_t Below(uint64_t n) { return engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

double Reflect(double y, double lo, double hi) {
  if (hi <= lo) return lo;
  for (int i = 0; i < 8 && (y < lo || y > hi); ++i) {
    if (y < lo) y = 2 * lo - y;
    if (y > hi) y = 2 * hi - y;
  }
  return std::clamp(y, lo, hi);
}

int64_t RankFromLevel(double level, int64_t vocab_size) {
  const double r = std::round(std::pow(10.0, level) - 1.0);
  return std::clamp<int64_t>(static_cast<int64_t>(r), 0, vocab_size - 1);
}

// Watched-token log10(rank + 1) per step, following the four planted phases.
std::vector<double> PlantLevels(const SyntheticPhaseSpec& spec) {
  const auto& lv = spec.rank_levels;
  const auto& len = spec.phase_lengths;
  std::vector<double> y;
  y.reserve(static_cast<size_t>(spec.length()));

  // I: strictly monotone rise in log-rank (readiness collapses).
  {
    Rng rng(spec.seed, 1);
    const double peak = lv.descent_floor + kDescentOvershoot;
    std::vector<double> inc(static_cast<size_t>(len[0] - 1));
    double total = 0.0;
    for (double& d : inc) {
      d = 1.0 + 0.5 * rng.Symmetric();
      total += d;
    }
    double cur = lv.initial;
    y.push_back(cur);
    for (double d : inc) {
      cur += (peak - lv.initial) * d / total;
      y.push_back(cur);
    }
    y.back() = peak;
  }
  // II: noisy linear recovery from the peak to the recovery level.
  {
    Rng rng(spec.seed, 2);
    const double start = y.back();
    for (int64_t k = 1; k <= len[1]; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(len[1]);
      double v = start + (lv.recovery - start) * frac;
      if (k < len[1]) v += kRecoveryNoise * rng.Symmetric();
      y.push_back(v);
    }
  }
  // III: mean-reverting walk reflected at the band edges. The attractor is
  // the band point nearest the recovery level (kept off the edges), so the
  // plateau carries on where phase II stopped. Spikes are one-step dips:
  // rank briefly improves as a sub-step completes, then falls back.
  {
    Rng rng(spec.seed, 3);
    const double margin = kPlateauMargin * (lv.plateau_high - lv.plateau_low);
    const double attractor =
        std::clamp(lv.recovery, lv.plateau_low + margin, lv.plateau_high - margin);
    double cur = Reflect(y.back(), lv.plateau_low, lv.plateau_high);
    for (int64_t k = 0; k < len[2]; ++k) {
      cur += kPlateauReversion * (attractor - cur) + kPlateauStep * rng.Symmetric();
      cur = Reflect(cur, lv.plateau_low, lv.plateau_high);
      double v = cur;
      if (rng.Uniform() < kSpikeProbability) {
        v = Reflect(cur - (0.3 + 0.3 * rng.Uniform()), lv.plateau_low, lv.plateau_high);
      }
      y.push_back(v);
    }
  }
  // IV: linear descent of log-rank to the target at the final step.
  {
    const double start = y.back();
    for (int64_t k = 1; k <= len[3]; ++k) {
      const double frac = static_cast<double>(k) / static_cast<double>(len[3]);
      y.push_back(start + (lv.ascent_target - start) * frac);
    }
  }
  return y;
}

std::string WrongAnswer(const SyntheticPhaseSpec& spec) {
  Rng rng(spec.seed, 5);
  std::string wrong;
  do {
    wrong = std::to_string(1 + rng.Below(997));
  } while (wrong == spec.gold);
  return wrong;
}

}  // namespace

int64_t SyntheticPhaseSpec::length() const {
  return phase_lengths[0] + phase_lengths[1] + phase_lengths[2] + phase_lengths[3];
}

std::array<int64_t, 3> SyntheticPhaseSpec::boundaries() const {
  return {phase_lengths[0], phase_lengths[0] + phase_lengths[1],
          phase_lengths[0] + phase_lengths[1] + phase_lengths[2]};
}

void SyntheticPhaseSpec::Validate() const {
  auto bad = [](const std::string& what) {
    throw Error(ErrorCode::kConfig, "invalid synthetic phase spec: " + what);
  };
  for (int64_t n : phase_lengths) {
    if (n < 2) bad("every phase needs at least 2 steps");
  }
  const RankLevels& lv = rank_levels;
  if (!(lv.plateau_low <= lv.plateau_high)) bad("plateau band low > high");
  if (lv.ascent_target != 0.0) bad("ascent target must be 0 (rank reaches top-1)");
  if (!(lv.initial >= 0.0 && lv.descent_floor > lv.initial)) {
    bad("descent floor must lie above the initial level");
  }
  if (!(lv.recovery < lv.descent_floor)) bad("recovery level must lie below the descent floor");
  if (!(lv.plateau_low > 0.0)) bad("plateau band must be positive");
  const double max_level = std::log10(static_cast<double>(vocab_size));
  if (lv.descent_floor + kDescentOvershoot > max_level) {
    bad("descent floor exceeds the vocabulary size");
  }
  for (const EntropyPhase& e : entropy_profile) {
    if (!(e.mean >= 0.0 && e.jitter >= 0.0)) bad("entropy mean and jitter must be >= 0");
  }
  if (watched_token < 0 || watched_token >= vocab_size) bad("watched token outside vocabulary");
  if (topk < 1 || topk > vocab_size) bad("topk out of range");
  if (probe_interval < 0) bad("probe interval must be >= 0");
  if (gold.empty()) bad("gold answer must be non-empty");
  if (!(saturation >= 0.0 && saturation <= 1.0)) bad("saturation must be in [0, 1]");
}

TraceFile GenerateSynthetic(const SyntheticPhaseSpec& spec) {
  spec.Validate();
  const int64_t length = spec.length();
  const std::vector<double> levels = PlantLevels(spec);

  TraceFile trace;
  trace.header.tokenizer = "synthetic";
  trace.header.vocab_size = spec.vocab_size;
  trace.header.watched_token = spec.watched_token;
  trace.header.source_kind = "synthetic";
  trace.header.seed = spec.seed;
  trace.header.step_count = length;
  trace.header.natural_stop = length - 1;

  Rng entropy_rng(spec.seed, 4);
  Rng token_rng(spec.seed, 6);
  const auto bounds = spec.boundaries();
  const double decay = 0.5;
  std::unordered_set<TokenId> used;

  for (int64_t t = 0; t < length; ++t) {
    const int phase = t < bounds[0] ? 0 : t < bounds[1] ? 1 : t < bounds[2] ? 2 : 3;
    StepObservation s;
    s.t = t;
    s.step_wall_time = kStepWallTime;
    const EntropyPhase& ep = spec.entropy_profile[static_cast<size_t>(phase)];
    s.entropy = std::max(0.0, ep.mean + ep.jitter * entropy_rng.Symmetric());

    const bool last = t == length - 1;
    s.watched_rank = last ? 0 : std::max<int64_t>(1, RankFromLevel(levels[static_cast<size_t>(t)], spec.vocab_size));
    s.censored = false;

    // Top-K: geometric masses whose total shrinks with entropy. The watched
    // token sits at its rank when that is inside the list.
    const int64_t k = spec.topk;
    const double top_mass = std::clamp(std::exp(-0.3 * s.entropy), 0.05, 0.99);
    const double norm = (1.0 - decay) / (1.0 - std::pow(decay, static_cast<double>(k)));
    used.clear();
    used.insert(spec.watched_token);
    for (int64_t i = 0; i < k; ++i) {
      TokenId id;
      if (i == s.watched_rank) {
        id = spec.watched_token;
      } else {
        do {
          id = static_cast<TokenId>(token_rng.Below(static_cast<uint64_t>(spec.vocab_size)));
        } while (!used.insert(id).second);
      }
      const double p = top_mass * norm * std::pow(decay, static_cast<double>(i));
      s.topk.push_back({id, std::log(p)});
    }
    s.chosen_token = s.topk.front().token;
    s.chosen_text = last ? "</think>" : "";

    if (!last && spec.probe_interval > 0 && t > 0 && t % spec.probe_interval == 0) {
      const double progress = static_cast<double>(t) / static_cast<double>(length);
      const std::string ans = progress >= spec.saturation ? spec.gold : WrongAnswer(spec);
      ProbeBranch branch;
      branch.suffix = spec.probe_suffix;
      branch.answer = {"The answer is " + ans + ".", 6};
      trace.probe_branches.emplace(t, std::move(branch));
    }
    trace.steps.push_back(std::move(s));
  }
  const std::string final_ans = spec.final_correct ? spec.gold : WrongAnswer(spec);
  trace.header.final_answer = {"Therefore, the final answer is " + final_ans + ".", 9};
  trace.Validate();
  return trace;
}

std::string CheckSyntheticShape(const SyntheticPhaseSpec& spec, const TraceFile& trace) {
  const int64_t length = spec.length();
  if (static_cast<int64_t>(trace.steps.size()) != length) return "length mismatch";
  const auto b = spec.boundaries();
  const auto& lv = spec.rank_levels;
  auto level = [&](int64_t t) {
    return std::log10(static_cast<double>(trace.steps[static_cast<size_t>(t)].watched_rank) + 1.0);
  };
  auto rank = [&](int64_t t) { return trace.steps[static_cast<size_t>(t)].watched_rank; };
  // Rounding to integer ranks can flatten a strict rise; allow equal ranks.
  for (int64_t t = 1; t < b[0]; ++t) {
    if (rank(t) < rank(t - 1)) return "phase I not monotone at step " + std::to_string(t);
  }
  if (!(level(b[0] - 1) > lv.descent_floor)) return "phase I does not pass the descent floor";
  const double tol = 0.5 / std::log(10.0) / std::pow(10.0, lv.plateau_low);  // rounding slack
  if (std::abs(level(b[1] - 1) - lv.recovery) > 0.01) return "phase II does not reach the recovery level";
  if (!(level(b[1] - 1) < level(b[0] - 1))) return "phase II does not recover";
  for (int64_t t = b[1]; t < b[2]; ++t) {
    if (level(t) < lv.plateau_low - tol - 1e-9 || level(t) > lv.plateau_high + tol + 1e-9) {
      return "phase III leaves the plateau band at step " + std::to_string(t);
    }
  }
  for (int64_t t = b[2]; t < length; ++t) {
    if (rank(t) > rank(t - 1) && t > b[2]) return "phase IV not monotone at step " + std::to_string(t);
  }
  if (rank(length - 1) != 0) return "final rank is not 0";
  if (trace.steps.back().chosen_token != trace.header.watched_token) {
    return "final step does not emit the watched token";
  }
  if (!trace.header.natural_stop || *trace.header.natural_stop != length - 1) {
    return "natural_stop not at final step";
  }
  return {};
}

}  // namespace rankstop::stream
