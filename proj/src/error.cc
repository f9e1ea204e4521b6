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

#include "rankstop/error.h"

namespace rankstop {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedDistribution: return "malformed-distribution";
    case ErrorCode::kMalformedTrace: return "malformed-trace";
    case ErrorCode::kIntegrity: return "integrity";
    case ErrorCode::kConfig: return "configuration";
    case ErrorCode::kCapability: return "capability";
    case ErrorCode::kSession: return "session";
    case ErrorCode::kUnsupportedProbe: return "unsupported-probe";
    case ErrorCode::kPolicyUnavailable: return "policy-unavailable";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kUndefinedRate: return "undefined-rate";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kBoundary: return "boundary";
    case ErrorCode::kLoad: return "load";
    case ErrorCode::kScoring: return "scoring";
    case ErrorCode::kEmit: return "emit";
    case ErrorCode::kUsage: return "usage";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace rankstop
