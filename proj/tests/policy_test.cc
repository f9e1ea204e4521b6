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

#include <cmath>
#include <random>
#include <vector>

#include "oracles.h"
#include "rankstop/error.h"
#include "rankstop/policy.h"

namespace rankstop::policy {
namespace {

PolicyConfig Cfg(double lambda = 0.8, int64_t t_max = 512) {
  PolicyConfig c;
  c.lambda = lambda;
  c.t_max = t_max;
  c.watched_token = 3;
  return c;
}

std::vector<float> RandomLogits(std::mt19937_64& rng, size_t n, bool with_ties) {
  std::normal_distribution<float> d(0.0f, 2.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = with_ties ? std::round(d(rng)) : d(rng);
  return v;
}

TEST_CASE("threshold matches the extended-precision oracle") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int64_t> t_dist(0, 1000);
  std::uniform_real_distribution<double> h_dist(0.0, 10.0);
  for (int i = 0; i < 5000; ++i) {
    const int64_t t = t_dist(rng);
    const double h = h_dist(rng);
    for (double lambda : {0.0, 0.2, 0.8, 1.6}) {
      for (int64_t t_max : {64, 512}) {
        CHECK(DynamicThreshold(t, h, Cfg(lambda, t_max)) == oracle::Threshold(t, h, lambda, t_max));
      }
    }
  }
}

TEST_CASE("threshold worked values") {
  CHECK(DynamicThreshold(0, 0.0, Cfg()) == 0);
  CHECK(DynamicThreshold(100, 0.0, Cfg()) == 100);
  CHECK(DynamicThreshold(1000, 0.0, Cfg()) == 512);
  // 100 * exp(-0.8) = 44.93...
  CHECK(DynamicThreshold(100, 1.0, Cfg()) == 44);
  CHECK(DynamicThreshold(100, 1.0, Cfg(0.0)) == 100);
}

TEST_CASE("threshold monotonicity properties") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> t_dist(0, 2000);
  std::uniform_real_distribution<double> h_dist(0.0, 8.0);
  std::uniform_real_distribution<double> l_dist(0.0, 3.0);
  for (int i = 0; i < 2000; ++i) {
    const int64_t t = t_dist(rng);
    const double h = h_dist(rng);
    const double l1 = l_dist(rng), l2 = l1 + l_dist(rng);
    CHECK(DynamicThreshold(t, h, Cfg(l1)) >= DynamicThreshold(t, h, Cfg(l2)));
    CHECK(DynamicThreshold(t, h, Cfg(l1, 128)) <= DynamicThreshold(t, h, Cfg(l1, 512)));
    CHECK(DynamicThreshold(t, h, Cfg(l1)) <= DynamicThreshold(t + 7, h, Cfg(l1)));
    // Zero entropy removes the lambda dependence.
    CHECK(DynamicThreshold(t, 0.0, Cfg(l1)) == std::min<int64_t>(t, 512));
  }
}

TEST_CASE("rank over full logits equals the sort oracle") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const size_t n = 1 + rng() % 10000;
    const auto logits = RandomLogits(rng, n, i % 2 == 0);
    const size_t w = rng() % n;
    const RankResult r = ComputeRank(logits, static_cast<TokenId>(w));
    CHECK(r.rank == oracle::SortRank(logits, w));
    CHECK_FALSE(r.censored);
  }
}

TEST_CASE("ties resolve in the watched token's favour") {
  const std::vector<float> logits = {1.0f, 2.0f, 2.0f, 2.0f};
  CHECK(ComputeRank(logits, 3).rank == 0);
  CHECK(ComputeRank(logits, 0).rank == 3);
}

TEST_CASE("rank over top-K views") {
  std::vector<TokenLogprob> topk = {{9, -0.1}, {4, -1.0}, {3, -2.0}, {7, -3.0}};
  CHECK(ComputeRank(std::span<const TokenLogprob>(topk), 3) == RankResult{2, false});
  CHECK(ComputeRank(std::span<const TokenLogprob>(topk), 9) == RankResult{0, false});
  CHECK(ComputeRank(std::span<const TokenLogprob>(topk), 5) == RankResult{4, true});
  CHECK(ComputeRank(Distribution::FromLogprobs(topk), 5) == RankResult{4, true});
  CHECK(ComputeRank(Distribution::FromLogprobs(topk), 7).rank == 3);
}

TEST_CASE("out of range watched ids are rejected for full logits") {
  const std::vector<float> logits = {1.0f, 2.0f};
  CHECK_THROWS_AS(ComputeRank(logits, 2), Error);
  CHECK_THROWS_AS(ComputeRank(logits, -1), Error);
}

TEST_CASE("entropy agrees with the extended-precision oracle") {
  std::mt19937_64 rng(17);
  std::gamma_distribution<double> gamma(0.3, 1.0);
  for (int i = 0; i < 300; ++i) {
    const size_t n = 1 + rng() % 200;
    std::vector<double> w(n);
    double total = 0.0;
    for (auto& x : w) total += (x = gamma(rng) + 1e-300);
    Distribution d;
    std::vector<double> masses;
    for (size_t j = 0; j < n; ++j) {
      d.probs.emplace_back(static_cast<TokenId>(j), w[j] / total);
      masses.push_back(w[j] / total);
    }
    double sum = 0.0;
    for (double p : masses) sum += p;
    // Push any rounding residue into the tail so the distribution is exact.
    d.tail_mass = std::max(0.0, 1.0 - sum);
    if (d.tail_mass > 0) masses.push_back(d.tail_mass);
    CHECK(std::abs(ShannonEntropy(d) - oracle::Entropy(masses)) <= 1e-12);
  }
}

TEST_CASE("entropy bounds and extremes") {
  Distribution one_hot;
  one_hot.probs = {{0, 1.0}, {1, 0.0}, {2, 0.0}};
  CHECK(ShannonEntropy(one_hot) == 0.0);
  for (int n : {1, 2, 3, 97, 1000}) {
    Distribution u;
    for (int i = 0; i < n; ++i) u.probs.emplace_back(i, 1.0 / n);
    CHECK(std::abs(ShannonEntropy(u) - std::log(static_cast<double>(n))) <= 1e-12);
  }
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const size_t n = 1 + rng() % 50;
    std::vector<double> w(n);
    double total = 0;
    for (auto& x : w) total += (x = u01(rng));
    const double tail = u01(rng) < 0.5 ? 0.0 : 0.3;
    Distribution d;
    for (size_t j = 0; j < n; ++j) d.probs.emplace_back(j, (1.0 - tail) * w[j] / total);
    d.tail_mass = tail;
    const double h = ShannonEntropy(d);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(n + (tail > 0 ? 1 : 0))) + 1e-12);
  }
}

TEST_CASE("entropy from logits equals entropy of the softmax") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 100; ++i) {
    const auto logits = RandomLogits(rng, 1 + rng() % 500, false);
    const Distribution d = Distribution::FromLogits(logits);
    std::vector<double> masses;
    for (const auto& e : d.probs) masses.push_back(e.second);
    CHECK(std::abs(EntropyFromLogits(logits) - oracle::Entropy(masses)) <= 1e-9);
  }
}

TEST_CASE("distribution validation") {
  Distribution d;
  d.probs = {{1, 0.5}, {2, 0.6}};
  CHECK_THROWS_AS(d.Validate(), Error);
  d.probs = {{1, 0.5}, {1, 0.5}};
  CHECK_THROWS_AS(d.Validate(), Error);
  d.probs = {{1, -0.1}, {2, 1.1}};
  CHECK_THROWS_AS(d.Validate(), Error);
  d.probs = {{1, 0.25}, {2, 0.25}};
  d.tail_mass = 0.5;
  CHECK_NOTHROW(d.Validate());
  const std::vector<TokenLogprob> topk = {{1, std::log(0.5)}, {2, std::log(0.25)}};
  CHECK(Distribution::FromLogprobs(topk).tail_mass == doctest::Approx(0.25));
}

TEST_CASE("should_stop guards and firing") {
  const PolicyConfig cfg = Cfg();
  StopDecision d = ShouldStop(10, 0, 0.0, cfg);
  CHECK_FALSE(d.stop);  // below min_steps
  CHECK(d.tau == 10);
  d = ShouldStop(16, 16, 0.0, cfg);
  CHECK(d.stop);
  CHECK(d.reason == StopReason::kThresholdFired);
  d = ShouldStop(16, 17, 0.0, cfg);
  CHECK_FALSE(d.stop);
  CHECK(d.reason == StopReason::kNotTriggered);

  PolicyConfig every4 = cfg;
  every4.check_interval = 4;
  CHECK_FALSE(ShouldStop(17, 0, 0.0, every4).stop);
  CHECK(ShouldStop(20, 0, 0.0, every4).stop);

  // Censored observations use rank = K unchanged.
  StepObservation obs;
  obs.watched_rank = 513;
  obs.censored = true;
  CHECK_FALSE(ShouldStop(10000, obs, cfg).stop);
}

TEST_CASE("should_stop is deterministic") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const int64_t t = rng() % 2000, r = rng() % 600;
    const double h = (rng() % 1000) / 100.0;
    CHECK(ShouldStop(t, r, h, Cfg()) == ShouldStop(t, r, h, Cfg()));
  }
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(Cfg().Validate(152064));
  PolicyConfig c = Cfg();
  c.lambda = -1;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = Cfg();
  c.t_max = 0;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = Cfg();
  c.check_interval = 0;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = Cfg();
  c.min_steps = -1;
  CHECK_THROWS_AS(c.Validate(), Error);
  c = Cfg();
  c.watched_token = 200000;
  CHECK_THROWS_AS(c.Validate(152064), Error);
  BaselineConfig b;
  b.ratio = 0.0;
  CHECK_THROWS_AS(b.Validate(), Error);
  b = {};
  b.convergence_k = 0;
  CHECK_THROWS_AS(b.Validate(), Error);
}

TEST_CASE("fixed ratio stop step") {
  CHECK(FixedRatioStopStep(100, 0.25) == 25);
  CHECK(FixedRatioStopStep(30, 0.1) == 3);
  CHECK(FixedRatioStopStep(7, 0.5) == 4);
  CHECK(FixedRatioStopStep(7, 1.0) == 7);
  CHECK(FixedRatioStop(25, 100, 0.25));
  CHECK_FALSE(FixedRatioStop(24, 100, 0.25));
  CHECK_THROWS_AS(FixedRatioStop(5, std::nullopt, 0.5), Error);
  CHECK_THROWS_AS(FixedRatioStopStep(10, 1.5), Error);
}

TEST_CASE("answer convergence") {
  using V = std::vector<std::string>;
  CHECK_FALSE(AnswerConvergenceStop(V{"4"}, 2));
  CHECK(AnswerConvergenceStop(V{"3", "4", "4"}, 2));
  CHECK_FALSE(AnswerConvergenceStop(V{"4", "3"}, 2));
  CHECK_FALSE(AnswerConvergenceStop(V{"", ""}, 2));
  CHECK(AnswerConvergenceStop(V{"1", "4", "4", "4"}, 3));
}

TEST_CASE("stop reason names round trip") {
  for (StopReason r : {StopReason::kThresholdFired, StopReason::kNaturalTermination,
                       StopReason::kBudgetExhausted, StopReason::kNotTriggered}) {
    CHECK(ParseStopReason(StopReasonName(r)) == r);
  }
  CHECK_FALSE(ParseStopReason("bogus").has_value());
}

}  // namespace
}  // namespace rankstop::policy
