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

// Compiled with -mavx2 -mfma; only called after a runtime feature check.

#include <immintrin.h>

#include <cstring>

#include "rankstop/simd/kernels.h"

namespace rankstop::simd::avx2 {

size_t CountGreater(const float* values, size_t n, float pivot) {
  const __m256 vpivot = _mm256_set1_ps(pivot);
  size_t count = 0;
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(values + i);
    // Ordered, quiet: NaN lanes compare false, matching the scalar `>`.
    const __m256 gt = _mm256_cmp_ps(v, vpivot, _CMP_GT_OQ);
    count += static_cast<size_t>(__builtin_popcount(_mm256_movemask_ps(gt)));
  }
  for (; i < n; ++i) {
    count += values[i] > pivot ? 1 : 0;
  }
  return count;
}

float MaxValue(const float* values, size_t n) {
  if (n < 8) return scalar::MaxValue(values, n);
  __m256 vmax = _mm256_loadu_ps(values);
  size_t i = 8;
  for (; i + 8 <= n; i += 8) {
    vmax = _mm256_max_ps(vmax, _mm256_loadu_ps(values + i));
  }
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, vmax);
  float best = lanes[0];
  for (int k = 1; k < 8; ++k) {
    if (lanes[k] > best) best = lanes[k];
  }
  for (; i < n; ++i) {
    if (values[i] > best) best = values[i];
  }
  return best;
}

double MaskedProductSum(const float* a, const float* b, const uint8_t* mask,
                        size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  const __m256d zero = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    uint64_t mbytes;
    std::memcpy(&mbytes, mask + i, sizeof(mbytes));
    if (mbytes == 0) continue;
    const __m128i m8 = _mm_cvtsi64_si128(static_cast<long long>(mbytes));
    const __m256d mlo = _mm256_cmp_pd(
        _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(m8)), zero, _CMP_NEQ_OQ);
    const __m256d mhi = _mm256_cmp_pd(
        _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(_mm_srli_si128(m8, 4))), zero,
        _CMP_NEQ_OQ);

    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    const __m256d alo = _mm256_cvtps_pd(_mm256_castps256_ps128(va));
    const __m256d ahi = _mm256_cvtps_pd(_mm256_extractf128_ps(va, 1));
    const __m256d blo = _mm256_cvtps_pd(_mm256_castps256_ps128(vb));
    const __m256d bhi = _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1));

    // float*float is exact in double, so FMA rounds identically to mul+add.
    acc0 = _mm256_fmadd_pd(_mm256_and_pd(alo, mlo), blo, acc0);
    acc1 = _mm256_fmadd_pd(_mm256_and_pd(ahi, mhi), bhi, acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) {
    if (mask[i] != 0) {
      sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
  }
  return sum;
}

}  // namespace rankstop::simd::avx2
