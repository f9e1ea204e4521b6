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

#include "rankstop/simd/kernels.h"

namespace rankstop::simd::scalar {

size_t CountGreater(const float* values, size_t n, float pivot) {
  size_t count = 0;
  for (size_t i = 0; i < n; ++i) {
    count += values[i] > pivot ? 1 : 0;
  }
  return count;
}

float MaxValue(const float* values, size_t n) {
  float best = values[0];
  for (size_t i = 1; i < n; ++i) {
    if (values[i] > best) best = values[i];
  }
  return best;
}

double MaskedProductSum(const float* a, const float* b, const uint8_t* mask,
                        size_t n) {
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (mask[i] != 0) {
      sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
  }
  return sum;
}

}  // namespace rankstop::simd::scalar
