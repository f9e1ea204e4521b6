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

#include "rankstop/record.h"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "json_util.h"
#include "rankstop/error.h"

namespace rankstop {
namespace {

using nlohmann::json;
using internal::AppendKey;
using internal::AppendReal;
using internal::AppendString;

double RealOrNan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

void AppendDecision(std::string& out, const policy::StopDecision& d) {
  out += '[';
  out += std::to_string(d.t);
  out += ',';
  out += d.stop ? "true" : "false";
  out += ',';
  out += std::to_string(d.tau);
  out += ',';
  out += std::to_string(d.rank);
  out += ',';
  AppendReal(out, d.entropy);
  out += ",\"";
  out += policy::StopReasonName(d.reason);
  out += "\"]";
}

policy::StopDecision DecisionFromJson(const json& j) {
  policy::StopDecision d;
  d.t = j.at(0).get<int64_t>();
  d.stop = j.at(1).get<bool>();
  d.tau = j.at(2).get<int64_t>();
  d.rank = j.at(3).get<int64_t>();
  d.entropy = RealOrNan(j.at(4));
  const auto reason = policy::ParseStopReason(j.at(5).get<std::string>());
  if (!reason) throw Error(ErrorCode::kFormat, "unknown stop reason " + j.at(5).dump());
  d.reason = *reason;
  return d;
}

}  // namespace

std::string_view TaskKindName(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNumeric: return "numeric";
    case TaskKind::kMultipleChoice: return "multiple_choice";
    case TaskKind::kFreeform: return "freeform";
  }
  return "numeric";
}

std::optional<TaskKind> ParseTaskKind(std::string_view name) {
  for (TaskKind k : {TaskKind::kNumeric, TaskKind::kMultipleChoice, TaskKind::kFreeform}) {
    if (TaskKindName(k) == name) return k;
  }
  return std::nullopt;
}

std::string_view PolicyKindName(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::kSyncThink: return "syncthink";
    case PolicyKind::kFull: return "full";
    case PolicyKind::kNone: return "none";
    case PolicyKind::kFixedRatio: return "fixed_ratio";
    case PolicyKind::kAnswerConvergence: return "answer_convergence";
  }
  return "syncthink";
}

std::optional<PolicyKind> ParsePolicyKind(std::string_view name) {
  for (PolicyKind k : {PolicyKind::kSyncThink, PolicyKind::kFull, PolicyKind::kNone,
                       PolicyKind::kFixedRatio, PolicyKind::kAnswerConvergence}) {
    if (PolicyKindName(k) == name) return k;
  }
  return std::nullopt;
}

std::string RunConfig::PolicyName() const {
  std::string name(PolicyKindName(policy));
  if (policy == PolicyKind::kFixedRatio) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "@%g", baseline.ratio);
    name += buf;
  }
  return name;
}

std::string SerializeRecord(const GenerationRecord& r) {
  std::string out;
  out.reserve(1024 + r.rank_trajectory.size() * 40 + r.trail.size() * 48);
  out += '{';
  AppendKey(out, "sample_id", true);
  AppendString(out, r.sample_id);
  AppendKey(out, "policy_name", false);
  AppendString(out, r.policy_name);

  const RunConfig& c = r.config;
  AppendKey(out, "config", false);
  out += '{';
  AppendKey(out, "policy", true);
  AppendString(out, PolicyKindName(c.policy));
  AppendKey(out, "lambda", false);
  AppendReal(out, c.policy_config.lambda);
  AppendKey(out, "t_max", false);
  out += std::to_string(c.policy_config.t_max);
  AppendKey(out, "watched_token", false);
  out += std::to_string(c.policy_config.watched_token);
  AppendKey(out, "min_steps", false);
  out += std::to_string(c.policy_config.min_steps);
  AppendKey(out, "check_interval", false);
  out += std::to_string(c.policy_config.check_interval);
  AppendKey(out, "ratio", false);
  AppendReal(out, c.baseline.ratio);
  AppendKey(out, "convergence_k", false);
  out += std::to_string(c.baseline.convergence_k);
  AppendKey(out, "segment_len", false);
  out += std::to_string(c.baseline.segment_len);
  AppendKey(out, "max_new_tokens", false);
  out += std::to_string(c.max_new_tokens);
  AppendKey(out, "task_kind", false);
  AppendString(out, TaskKindName(c.task_kind));
  AppendKey(out, "probe_suffix", false);
  AppendString(out, c.probe_suffix);
  out += '}';

  AppendKey(out, "full_length", false);
  out += r.full_length ? std::to_string(*r.full_length) : "null";
  AppendKey(out, "reasoning_tokens", false);
  out += std::to_string(r.reasoning_tokens);
  AppendKey(out, "answer_tokens", false);
  out += std::to_string(r.answer_tokens);
  AppendKey(out, "total_tokens", false);
  out += std::to_string(r.total_tokens);
  AppendKey(out, "stop_step", false);
  out += std::to_string(r.stop_step);
  AppendKey(out, "injected", false);
  out += r.injected ? "true" : "false";
  AppendKey(out, "final_decision", false);
  AppendDecision(out, r.final_decision);
  AppendKey(out, "trail", false);
  out += '[';
  for (size_t i = 0; i < r.trail.size(); ++i) {
    if (i) out += ',';
    AppendDecision(out, r.trail[i]);
  }
  out += ']';
  AppendKey(out, "rank_trajectory", false);
  out += '[';
  for (size_t i = 0; i < r.rank_trajectory.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(r.rank_trajectory[i].first) + ',' +
           std::to_string(r.rank_trajectory[i].second) + ']';
  }
  out += ']';
  AppendKey(out, "entropy_trajectory", false);
  out += '[';
  for (size_t i = 0; i < r.entropy_trajectory.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(r.entropy_trajectory[i].first) + ',';
    AppendReal(out, r.entropy_trajectory[i].second);
    out += ']';
  }
  out += ']';
  AppendKey(out, "answer_text", false);
  AppendString(out, r.answer_text);
  AppendKey(out, "normalized_answer", false);
  AppendString(out, r.normalized_answer);
  AppendKey(out, "timing", false);
  out += '{';
  AppendKey(out, "t_gen", true);
  AppendReal(out, r.timing.t_gen);
  AppendKey(out, "t_metric", false);
  AppendReal(out, r.timing.t_metric);
  AppendKey(out, "t_eval", false);
  AppendReal(out, r.timing.t_eval);
  AppendKey(out, "t_total", false);
  AppendReal(out, r.timing.t_total);
  out += '}';
  AppendKey(out, "complete", false);
  out += r.complete ? "true" : "false";
  AppendKey(out, "error", false);
  AppendString(out, r.error);
  out += '}';
  return out;
}

GenerationRecord ParseRecord(std::string_view line) {
  try {
    const json j = json::parse(line);
    GenerationRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.policy_name = j.at("policy_name").get<std::string>();
    const json& c = j.at("config");
    const auto kind = ParsePolicyKind(c.at("policy").get<std::string>());
    if (!kind) throw Error(ErrorCode::kFormat, "unknown policy " + c.at("policy").dump());
    r.config.policy = *kind;
    r.config.policy_config.lambda = c.at("lambda").get<double>();
    r.config.policy_config.t_max = c.at("t_max").get<int64_t>();
    r.config.policy_config.watched_token = c.at("watched_token").get<int64_t>();
    r.config.policy_config.min_steps = c.at("min_steps").get<int64_t>();
    r.config.policy_config.check_interval = c.at("check_interval").get<int64_t>();
    r.config.baseline.ratio = c.at("ratio").get<double>();
    r.config.baseline.convergence_k = c.at("convergence_k").get<int64_t>();
    r.config.baseline.segment_len = c.at("segment_len").get<int64_t>();
    r.config.max_new_tokens = c.at("max_new_tokens").get<int64_t>();
    const auto task = ParseTaskKind(c.at("task_kind").get<std::string>());
    if (!task) throw Error(ErrorCode::kFormat, "unknown task kind " + c.at("task_kind").dump());
    r.config.task_kind = *task;
    r.config.probe_suffix = c.at("probe_suffix").get<std::string>();

    if (!j.at("full_length").is_null()) r.full_length = j.at("full_length").get<int64_t>();
    r.reasoning_tokens = j.at("reasoning_tokens").get<int64_t>();
    r.answer_tokens = j.at("answer_tokens").get<int64_t>();
    r.total_tokens = j.at("total_tokens").get<int64_t>();
    r.stop_step = j.at("stop_step").get<int64_t>();
    r.injected = j.at("injected").get<bool>();
    r.final_decision = DecisionFromJson(j.at("final_decision"));
    for (const json& d : j.at("trail")) r.trail.push_back(DecisionFromJson(d));
    for (const json& p : j.at("rank_trajectory")) {
      r.rank_trajectory.emplace_back(p.at(0).get<int64_t>(), p.at(1).get<int64_t>());
    }
    for (const json& p : j.at("entropy_trajectory")) {
      r.entropy_trajectory.emplace_back(p.at(0).get<int64_t>(), RealOrNan(p.at(1)));
    }
    r.answer_text = j.at("answer_text").get<std::string>();
    r.normalized_answer = j.at("normalized_answer").get<std::string>();
    const json& tm = j.at("timing");
    r.timing.t_gen = tm.at("t_gen").get<double>();
    r.timing.t_metric = tm.at("t_metric").get<double>();
    r.timing.t_eval = tm.at("t_eval").get<double>();
    r.timing.t_total = tm.at("t_total").get<double>();
    r.complete = j.at("complete").get<bool>();
    r.error = j.at("error").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed record: ") + e.what());
  }
}

std::string SerializeRecords(const std::vector<GenerationRecord>& records) {
  std::string out;
  for (const GenerationRecord& r : records) {
    out += SerializeRecord(r);
    out += '\n';
  }
  return out;
}

std::vector<GenerationRecord> ReadRecordsFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open records file " + path);
  std::vector<GenerationRecord> records;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(ParseRecord(line));
    } catch (const Error& e) {
      throw Error(e.code(), path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void WriteRecordsFile(const std::vector<GenerationRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write records file " + path);
  out << SerializeRecords(records);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

}  // namespace rankstop
