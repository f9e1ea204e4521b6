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

#ifndef RANKSTOP_TESTS_SUPPORT_ORACLES_H_
#define RANKSTOP_TESTS_SUPPORT_ORACLES_H_

// Independent reference computations. Nothing here calls into the library's
// numeric code: thresholds and entropies use MPFR at 256 bits, ranks use a
// full sort, and the offline stop scan re-derives the decision rule.

#include <mpfr.h>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rankstop/observation.h"

namespace rankstop::oracle {

class Mpfr {
 public:
  Mpfr() { mpfr_init2(v_, 256); }
  ~Mpfr() { mpfr_clear(v_); }
  Mpfr(const Mpfr&) = delete;
  Mpfr& operator=(const Mpfr&) = delete;
  mpfr_t& get() { return v_; }

 private:
  mpfr_t v_;
};

inline int64_t Threshold(int64_t t, double entropy, double lambda, int64_t t_max) {
  const int64_t beta = std::min(std::max<int64_t>(t, 0), t_max);
  Mpfr x, e;
  mpfr_set_d(e.get(), lambda, MPFR_RNDN);
  mpfr_mul_d(e.get(), e.get(), entropy, MPFR_RNDN);
  mpfr_neg(e.get(), e.get(), MPFR_RNDN);
  mpfr_exp(e.get(), e.get(), MPFR_RNDN);
  mpfr_mul_si(x.get(), e.get(), static_cast<long>(beta), MPFR_RNDN);
  mpfr_floor(x.get(), x.get());
  return static_cast<int64_t>(mpfr_get_si(x.get(), MPFR_RNDN));
}

// -sum p ln p over the given masses (zeros skipped).
inline double Entropy(std::span<const double> masses) {
  Mpfr acc, term, lg;
  mpfr_set_zero(acc.get(), 1);
  for (double p : masses) {
    if (p <= 0.0) continue;
    mpfr_set_d(lg.get(), p, MPFR_RNDN);
    mpfr_log(lg.get(), lg.get(), MPFR_RNDN);
    mpfr_mul_d(term.get(), lg.get(), p, MPFR_RNDN);
    mpfr_sub(acc.get(), acc.get(), term.get(), MPFR_RNDN);
  }
  return mpfr_get_d(acc.get(), MPFR_RNDN);
}

// Position of the watched score after a stable descending sort that places
// the watched index ahead of ties.
inline int64_t SortRank(std::span<const float> scores, size_t watched) {
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a == watched && b != watched;
  });
  return static_cast<int64_t>(std::find(order.begin(), order.end(), watched) - order.begin());
}

struct ScanConfig {
  double lambda;
  int64_t t_max;
  int64_t min_steps;
  int64_t check_interval;
  int64_t watched;
};

// First step at which the rank rule fires, scanning a recorded trace; nullopt
// when it never fires before the trace's own terminator.
inline std::optional<int64_t> OfflineStopStep(std::span<const StepObservation> steps,
                                              const ScanConfig& cfg) {
  for (const StepObservation& s : steps) {
    if (s.chosen_token == cfg.watched) return std::nullopt;
    if (s.t < cfg.min_steps || s.t % cfg.check_interval != 0) continue;
    if (s.watched_rank <= Threshold(s.t, s.entropy, cfg.lambda, cfg.t_max)) return s.t;
  }
  return std::nullopt;
}

// sum_{i,j} a[i][j] * g[i][j] * m[i][j] by explicit row/column loops.
inline double NaiveSaliency(std::span<const float> a, std::span<const float> g,
                            std::span<const uint8_t> m, size_t rows, size_t cols) {
  long double acc = 0.0L;
  for (size_t i = 0; i < rows; ++i) {
    for (size_t j = 0; j < cols; ++j) {
      const size_t k = i * cols + j;
      if (m[k]) acc += static_cast<long double>(a[k]) * static_cast<long double>(g[k]);
    }
  }
  return static_cast<double>(acc);
}

}  // namespace rankstop::oracle

#endif  // RANKSTOP_TESTS_SUPPORT_ORACLES_H_
