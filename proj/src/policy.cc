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

#include "rankstop/policy.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "rankstop/error.h"
#include "rankstop/simd/kernels.h"

namespace rankstop::policy {
namespace {

constexpr double kMassTolerance = 1e-6;

[[noreturn]] void Malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedDistribution, "malformed distribution: " + what);
}

[[noreturn]] void BadConfig(const std::string& what) {
  throw Error(ErrorCode::kConfig, what);
}

}  // namespace

void PolicyConfig::Validate(int64_t vocab_size) const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    BadConfig("lambda must be a finite value >= 0");
  }
  if (t_max < 1) BadConfig("t_max must be >= 1");
  if (check_interval < 1) BadConfig("check_interval must be >= 1");
  if (min_steps < 0) BadConfig("min_steps must be >= 0");
  if (watched_token < 0) BadConfig("watched token id must be >= 0");
  if (vocab_size > 0 && watched_token >= vocab_size) {
    BadConfig("watched token id " + std::to_string(watched_token) +
              " outside vocabulary of size " + std::to_string(vocab_size));
  }
}

void BaselineConfig::Validate() const {
  if (!(ratio > 0.0 && ratio <= 1.0)) BadConfig("ratio must be in (0, 1]");
  if (convergence_k < 1) BadConfig("convergence k must be >= 1");
  if (segment_len < 1) BadConfig("segment length must be >= 1");
}

Distribution Distribution::FromLogprobs(std::span<const TokenLogprob> topk) {
  Distribution dist;
  dist.probs.reserve(topk.size());
  double mass = 0.0;
  for (const TokenLogprob& entry : topk) {
    const double p = std::exp(entry.logprob);
    dist.probs.emplace_back(entry.token, p);
    mass += p;
  }
  dist.tail_mass = std::max(0.0, 1.0 - mass);
  return dist;
}

Distribution Distribution::FromLogits(std::span<const float> logits) {
  if (logits.empty()) Malformed("empty logit vector");
  const float max_logit = simd::Kernels().max_value(logits.data(), logits.size());
  std::vector<double> weights(logits.size());
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    total += weights[i];
  }
  Distribution dist;
  dist.probs.reserve(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    dist.probs.emplace_back(static_cast<TokenId>(i), weights[i] / total);
  }
  return dist;
}

void Distribution::Validate() const {
  if (!(tail_mass >= 0.0 && tail_mass <= 1.0)) {
    Malformed("tail mass outside [0, 1]");
  }
  std::unordered_set<TokenId> seen;
  seen.reserve(probs.size());
  double mass = tail_mass;
  for (const auto& [token, p] : probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      Malformed("probability outside [0, 1] for token " + std::to_string(token));
    }
    if (!seen.insert(token).second) {
      Malformed("duplicate token " + std::to_string(token));
    }
    mass += p;
  }
  if (std::abs(mass - 1.0) > kMassTolerance) {
    Malformed("total mass " + std::to_string(mass) + " is not 1");
  }
}

RankResult ComputeRank(std::span<const float> logits, TokenId watched) {
  if (logits.empty()) Malformed("empty logit vector");
  if (watched < 0 || watched >= static_cast<TokenId>(logits.size())) {
    BadConfig("watched token id " + std::to_string(watched) +
              " outside vocabulary of size " + std::to_string(logits.size()));
  }
  const float pivot = logits[static_cast<size_t>(watched)];
  const size_t greater =
      simd::Kernels().count_greater(logits.data(), logits.size(), pivot);
  return {static_cast<int64_t>(greater), false};
}

RankResult ComputeRank(const Distribution& dist, TokenId watched) {
  if (dist.probs.empty()) Malformed("no enumerated entries");
  const auto it = std::find_if(dist.probs.begin(), dist.probs.end(),
                               [&](const auto& e) { return e.first == watched; });
  if (it == dist.probs.end()) {
    return {static_cast<int64_t>(dist.probs.size()), true};
  }
  const double pivot = it->second;
  int64_t greater = 0;
  for (const auto& [token, p] : dist.probs) {
    if (p > pivot) ++greater;
  }
  return {greater, false};
}

RankResult ComputeRank(std::span<const TokenLogprob> topk, TokenId watched) {
  if (topk.empty()) Malformed("empty top-K list");
  const auto it = std::find_if(topk.begin(), topk.end(),
                               [&](const TokenLogprob& e) { return e.token == watched; });
  if (it == topk.end()) {
    return {static_cast<int64_t>(topk.size()), true};
  }
  const double pivot = it->logprob;
  int64_t greater = 0;
  for (const TokenLogprob& e : topk) {
    if (e.logprob > pivot) ++greater;
  }
  return {greater, false};
}

double ShannonEntropy(const Distribution& dist) {
  dist.Validate();
  double h = 0.0;
  for (const auto& entry : dist.probs) {
    const double p = entry.second;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (dist.tail_mass > 0.0) h -= dist.tail_mass * std::log(dist.tail_mass);
  return h > 0.0 ? h : 0.0;
}

double EntropyFromLogits(std::span<const float> logits) {
  if (logits.empty()) Malformed("empty logit vector");
  const double max_logit =
      simd::Kernels().max_value(logits.data(), logits.size());
  double total = 0.0;
  double weighted = 0.0;
  for (const float x : logits) {
    const double shifted = static_cast<double>(x) - max_logit;
    const double w = std::exp(shifted);
    total += w;
    weighted += w * shifted;
  }
  // H = log Z - E[x - max]
  const double h = std::log(total) - weighted / total;
  return h > 0.0 ? h : 0.0;
}

int64_t DynamicThreshold(int64_t t, double entropy, const PolicyConfig& cfg) {
  const int64_t pacing = std::clamp<int64_t>(t, 0, cfg.t_max);
  if (pacing == 0) return 0;
  // Extended precision keeps the floor exact away from pathological ties.
  const long double scaled =
      static_cast<long double>(pacing) *
      std::exp(-static_cast<long double>(cfg.lambda) *
               static_cast<long double>(entropy));
  return static_cast<int64_t>(std::floor(scaled));
}

std::string_view StopReasonName(StopReason reason) {
  switch (reason) {
    case StopReason::kThresholdFired: return "threshold_fired";
    case StopReason::kNaturalTermination: return "natural_termination";
    case StopReason::kBudgetExhausted: return "budget_exhausted";
    case StopReason::kNotTriggered: return "not_triggered";
  }
  return "not_triggered";
}

std::optional<StopReason> ParseStopReason(std::string_view name) {
  for (StopReason r : {StopReason::kThresholdFired, StopReason::kNaturalTermination,
                       StopReason::kBudgetExhausted, StopReason::kNotTriggered}) {
    if (StopReasonName(r) == name) return r;
  }
  return std::nullopt;
}

StopDecision ShouldStop(int64_t t, int64_t rank, double entropy,
                        const PolicyConfig& cfg) {
  StopDecision d;
  d.t = t;
  d.rank = rank;
  d.entropy = entropy;
  d.tau = DynamicThreshold(t, entropy, cfg);
  d.stop = t >= cfg.min_steps && t % cfg.check_interval == 0 && rank <= d.tau;
  d.reason = d.stop ? StopReason::kThresholdFired : StopReason::kNotTriggered;
  return d;
}

StopDecision ShouldStop(int64_t t, const StepObservation& obs,
                        const PolicyConfig& cfg) {
  return ShouldStop(t, obs.watched_rank, obs.entropy, cfg);
}

int64_t FixedRatioStopStep(int64_t full_length, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) BadConfig("ratio must be in (0, 1]");
  if (full_length < 1) BadConfig("full-length reference must be >= 1");
  // ratio * length is computed in binary floating point, so values such as
  // 0.1 * 30 land a hair above the intended integer; snap those back.
  const long double exact = static_cast<long double>(ratio) * full_length;
  const long double nearest = std::round(exact);
  if (std::abs(exact - nearest) <= 1e-9L * std::max<long double>(1, exact)) {
    return static_cast<int64_t>(nearest);
  }
  return static_cast<int64_t>(std::ceil(exact));
}

bool FixedRatioStop(int64_t t, std::optional<int64_t> full_length, double ratio) {
  if (!full_length) {
    BadConfig("fixed-ratio truncation requires a full-reasoning length reference");
  }
  return t >= FixedRatioStopStep(*full_length, ratio);
}

bool AnswerConvergenceStop(std::span<const std::string> probe_answers, int64_t k) {
  if (k < 1 || probe_answers.size() < static_cast<size_t>(k)) return false;
  const auto last = probe_answers.last(static_cast<size_t>(k));
  const std::string& first = last.front();
  if (first.empty()) return false;
  return std::all_of(last.begin(), last.end(),
                     [&](const std::string& a) { return a == first; });
}

}  // namespace rankstop::policy
