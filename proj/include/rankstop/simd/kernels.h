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

#ifndef RANKSTOP_SIMD_KERNELS_H_
#define RANKSTOP_SIMD_KERNELS_H_

// Data-parallel inner loops used by the policy and saliency code. Every
// kernel has a scalar reference implementation; vector variants must agree
// with it (exactly for the integer/selection kernels, to within rounding of
// the summation order for the floating-point reductions).
//
// The active variant is chosen once at first use from the CPU's features.
// Setting RANKSTOP_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace rankstop::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view IsaName(Isa isa);

struct KernelTable {
  Isa isa;
  // Number of elements strictly greater than pivot. NaNs never compare
  // greater.
  size_t (*count_greater)(const float* values, size_t n, float pivot);
  // Maximum element; n must be > 0.
  float (*max_value)(const float* values, size_t n);
  // sum_i a[i] * b[i] * (mask[i] != 0), accumulated in double. Products of
  // two floats are exact in double, so only the summation order differs
  // between variants.
  double (*masked_product_sum)(const float* a, const float* b,
                               const uint8_t* mask, size_t n);
};

bool IsSupported(Isa isa);
std::vector<Isa> SupportedIsas();

// Table for a specific ISA. Throws rankstop::Error(kConfig) if the CPU lacks
// the required features.
const KernelTable& KernelsFor(Isa isa);

// Table selected for this process.
const KernelTable& Kernels();

namespace scalar {
size_t CountGreater(const float* values, size_t n, float pivot);
float MaxValue(const float* values, size_t n);
double MaskedProductSum(const float* a, const float* b, const uint8_t* mask,
                        size_t n);
}  // namespace scalar

#if defined(RANKSTOP_HAVE_AVX2)
namespace avx2 {
size_t CountGreater(const float* values, size_t n, float pivot);
float MaxValue(const float* values, size_t n);
double MaskedProductSum(const float* a, const float* b, const uint8_t* mask,
                        size_t n);
}  // namespace avx2
#endif

}  // namespace rankstop::simd

#endif  // RANKSTOP_SIMD_KERNELS_H_
