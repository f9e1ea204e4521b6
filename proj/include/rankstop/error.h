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

#ifndef RANKSTOP_ERROR_H_
#define RANKSTOP_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace rankstop {

enum class ErrorCode {
  kMalformedDistribution,
  kMalformedTrace,
  kIntegrity,
  kConfig,
  kCapability,
  kSession,
  kUnsupportedProbe,
  kPolicyUnavailable,
  kInsufficientData,
  kEmptyInput,
  kUndefinedRate,
  kFormat,
  kShape,
  kBoundary,
  kLoad,
  kScoring,
  kEmit,
  kUsage,
  kIo,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures are reported as Error; code() identifies the class of
// failure so callers (notably the CLI) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace rankstop

#endif  // RANKSTOP_ERROR_H_
