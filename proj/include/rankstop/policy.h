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

#ifndef RANKSTOP_POLICY_H_
#define RANKSTOP_POLICY_H_

// Stopping rules for reasoning-phase decoding.
//
// The rank-gated rule stops when the watched terminator token's 0-indexed
// rank falls at or below a threshold that grows with elapsed reasoning steps
// and shrinks with next-token entropy:
//
//   tau(t, H) = floor(min(t, t_max) * exp(-lambda * H))
//   stop(t)   = t >= min_steps && t % check_interval == 0 && rank <= tau
//
// Everything here is a pure function of its arguments.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rankstop/observation.h"

namespace rankstop::policy {

inline constexpr double kDefaultLambda = 0.8;
inline constexpr int64_t kDefaultTMax = 512;
inline constexpr int64_t kDefaultMinSteps = 16;
inline constexpr int64_t kDefaultCheckInterval = 1;
inline constexpr int64_t kDefaultSegmentLen = 64;
inline constexpr int64_t kDefaultConvergenceK = 2;

struct PolicyConfig {
  double lambda = kDefaultLambda;
  int64_t t_max = kDefaultTMax;
  TokenId watched_token = 0;
  int64_t min_steps = kDefaultMinSteps;
  int64_t check_interval = kDefaultCheckInterval;

  // Throws Error(kConfig). vocab_size <= 0 skips the vocabulary check.
  void Validate(int64_t vocab_size = 0) const;

  bool operator==(const PolicyConfig&) const = default;
};

struct BaselineConfig {
  double ratio = 1.0;
  int64_t convergence_k = kDefaultConvergenceK;
  int64_t segment_len = kDefaultSegmentLen;

  void Validate() const;

  bool operator==(const BaselineConfig&) const = default;
};

// Next-token distribution, possibly truncated to the top-K entries with the
// unenumerated remainder carried in tail_mass.
struct Distribution {
  std::vector<std::pair<TokenId, double>> probs;
  double tail_mass = 0.0;

  // Builds from top-K logprobs; tail_mass = max(0, 1 - sum(exp(logprob))).
  static Distribution FromLogprobs(std::span<const TokenLogprob> topk);
  // Softmax over a full logit vector; token ids are the indices.
  static Distribution FromLogits(std::span<const float> logits);

  // Throws Error(kMalformedDistribution).
  void Validate() const;
};

struct RankResult {
  int64_t rank = 0;
  bool censored = false;

  bool operator==(const RankResult&) const = default;
};

// Full logit vector: rank = count of logits strictly greater than the watched
// token's. Uses the active SIMD kernel.
RankResult ComputeRank(std::span<const float> logits, TokenId watched);
// Top-K view: absent watched token yields (K, censored).
RankResult ComputeRank(const Distribution& dist, TokenId watched);
RankResult ComputeRank(std::span<const TokenLogprob> topk, TokenId watched);

// Nats. The tail is treated as a single pseudo-token, which makes this a
// lower bound of the full-vocabulary entropy when tail_mass > 0.
double ShannonEntropy(const Distribution& dist);
// Entropy of softmax(logits) without materializing probabilities.
double EntropyFromLogits(std::span<const float> logits);

int64_t DynamicThreshold(int64_t t, double entropy, const PolicyConfig& cfg);

enum class StopReason {
  kThresholdFired,
  kNaturalTermination,
  kBudgetExhausted,
  kNotTriggered,
};

std::string_view StopReasonName(StopReason reason);
std::optional<StopReason> ParseStopReason(std::string_view name);

struct StopDecision {
  int64_t t = 0;
  bool stop = false;
  int64_t tau = 0;
  int64_t rank = 0;
  double entropy = 0.0;
  StopReason reason = StopReason::kNotTriggered;

  bool operator==(const StopDecision&) const = default;
};

StopDecision ShouldStop(int64_t t, int64_t rank, double entropy,
                        const PolicyConfig& cfg);
// Censored ranks participate unchanged.
StopDecision ShouldStop(int64_t t, const StepObservation& obs,
                        const PolicyConfig& cfg);

// True iff t >= ceil(ratio * full_length). Throws Error(kConfig) when the
// full-length reference is missing or the ratio is out of (0, 1].
bool FixedRatioStop(int64_t t, std::optional<int64_t> full_length,
                    double ratio);
int64_t FixedRatioStopStep(int64_t full_length, double ratio);

// True iff the last k answers exist, are non-empty and identical.
bool AnswerConvergenceStop(std::span<const std::string> probe_answers,
                           int64_t k);

}  // namespace rankstop::policy

#endif  // RANKSTOP_POLICY_H_
