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

#include <cstdlib>
#include <string>

#include "rankstop/error.h"
#include "rankstop/simd/kernels.h"

namespace rankstop::simd {
namespace {

constexpr KernelTable kScalarTable{
    Isa::kScalar,
    &scalar::CountGreater,
    &scalar::MaxValue,
    &scalar::MaskedProductSum,
};

#if defined(RANKSTOP_HAVE_AVX2)
constexpr KernelTable kAvx2Table{
    Isa::kAvx2,
    &avx2::CountGreater,
    &avx2::MaxValue,
    &avx2::MaskedProductSum,
};
#endif

const KernelTable& SelectAtStartup() {
  if (const char* forced = std::getenv("RANKSTOP_SIMD")) {
    const std::string name(forced);
    if (name == "scalar") return kScalarTable;
    if (name == "avx2") return KernelsFor(Isa::kAvx2);
  }
#if defined(RANKSTOP_HAVE_AVX2)
  if (IsSupported(Isa::kAvx2)) return kAvx2Table;
#endif
  return kScalarTable;
}

}  // namespace

std::string_view IsaName(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
  }
  return "unknown";
}

bool IsSupported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(RANKSTOP_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

std::vector<Isa> SupportedIsas() {
  std::vector<Isa> out;
  for (Isa isa : {Isa::kScalar, Isa::kAvx2}) {
    if (IsSupported(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& KernelsFor(Isa isa) {
  if (!IsSupported(isa)) {
    throw Error(ErrorCode::kConfig,
                "SIMD variant not supported on this CPU: " +
                    std::string(IsaName(isa)));
  }
#if defined(RANKSTOP_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& Kernels() {
  static const KernelTable& table = SelectAtStartup();
  return table;
}

}  // namespace rankstop::simd
