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

#ifndef RANKSTOP_SRC_JSON_UTIL_H_
#define RANKSTOP_SRC_JSON_UTIL_H_

// Small helpers shared by the line-delimited writers. Reals are always
// written with 17 significant digits so a parse/serialize cycle is bit-exact.

#include <cmath>
#include <cstdio>
#include <string>
#include <string_view>

#include "json.hpp"

namespace rankstop::internal {

inline void AppendReal(std::string& out, double value) {
  if (!std::isfinite(value)) {
    out += "null";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  out += buf;
}

inline std::string FormatReal(double value) {
  std::string s;
  AppendReal(s, value);
  return s;
}

inline void AppendString(std::string& out, std::string_view value) {
  out += nlohmann::json(std::string(value)).dump(
      -1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline void AppendKey(std::string& out, std::string_view key, bool first) {
  if (!first) out += ',';
  out += '"';
  out += key;
  out += "\":";
}

}  // namespace rankstop::internal

#endif  // RANKSTOP_SRC_JSON_UTIL_H_
