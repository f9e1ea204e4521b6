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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "json_util.h"
#include "rankstop/error.h"
#include "rankstop/stream.h"

namespace rankstop::stream {
namespace {

using nlohmann::json;
using internal::AppendKey;
using internal::AppendReal;
using internal::AppendString;

[[noreturn]] void Integrity(const std::string& what) {
  throw Error(ErrorCode::kIntegrity, "trace integrity error: " + what);
}

void AppendAnswer(std::string& out, const AnswerSegment& answer) {
  out += '{';
  AppendKey(out, "text", true);
  AppendString(out, answer.text);
  AppendKey(out, "tokens", false);
  out += std::to_string(answer.tokens);
  out += '}';
}

void AppendHeader(std::string& out, const TraceHeader& h) {
  out += '{';
  AppendKey(out, "tokenizer", true);
  AppendString(out, h.tokenizer);
  AppendKey(out, "vocab_size", false);
  out += std::to_string(h.vocab_size);
  AppendKey(out, "watched_token", false);
  out += std::to_string(h.watched_token);
  AppendKey(out, "source_kind", false);
  AppendString(out, h.source_kind);
  AppendKey(out, "seed", false);
  out += std::to_string(h.seed);
  AppendKey(out, "step_count", false);
  out += std::to_string(h.step_count);
  AppendKey(out, "natural_stop", false);
  out += h.natural_stop ? std::to_string(*h.natural_stop) : "null";
  AppendKey(out, "final_answer", false);
  AppendAnswer(out, h.final_answer);
  out += "}\n";
}

void AppendStep(std::string& out, const StepObservation& s,
                const ProbeBranch* probe) {
  out += '{';
  AppendKey(out, "t", true);
  out += std::to_string(s.t);
  AppendKey(out, "chosen_token", false);
  out += std::to_string(s.chosen_token);
  AppendKey(out, "chosen_text", false);
  AppendString(out, s.chosen_text);
  AppendKey(out, "topk", false);
  out += '[';
  for (size_t i = 0; i < s.topk.size(); ++i) {
    if (i) out += ',';
    out += '[';
    out += std::to_string(s.topk[i].token);
    out += ',';
    AppendReal(out, s.topk[i].logprob);
    out += ']';
  }
  out += ']';
  AppendKey(out, "watched_rank", false);
  out += std::to_string(s.watched_rank);
  AppendKey(out, "censored", false);
  out += s.censored ? "true" : "false";
  AppendKey(out, "entropy", false);
  AppendReal(out, s.entropy);
  AppendKey(out, "step_wall_time", false);
  AppendReal(out, s.step_wall_time);
  if (probe != nullptr) {
    AppendKey(out, "probe", false);
    out += '{';
    AppendKey(out, "suffix", true);
    AppendString(out, probe->suffix);
    AppendKey(out, "answer", false);
    AppendAnswer(out, probe->answer);
    out += '}';
  }
  out += "}\n";
}

AnswerSegment AnswerFromJson(const json& j) {
  AnswerSegment a;
  a.text = j.at("text").get<std::string>();
  a.tokens = j.at("tokens").get<int64_t>();
  return a;
}

TraceHeader HeaderFromJson(const json& j) {
  TraceHeader h;
  h.tokenizer = j.at("tokenizer").get<std::string>();
  h.vocab_size = j.at("vocab_size").get<int64_t>();
  h.watched_token = j.at("watched_token").get<int64_t>();
  h.source_kind = j.at("source_kind").get<std::string>();
  h.seed = j.at("seed").get<uint64_t>();
  h.step_count = j.at("step_count").get<int64_t>();
  const json& ns = j.at("natural_stop");
  if (!ns.is_null()) h.natural_stop = ns.get<int64_t>();
  h.final_answer = AnswerFromJson(j.at("final_answer"));
  return h;
}

StepObservation StepFromJson(const json& j, std::optional<ProbeBranch>& probe) {
  StepObservation s;
  s.t = j.at("t").get<int64_t>();
  s.chosen_token = j.at("chosen_token").get<int64_t>();
  s.chosen_text = j.at("chosen_text").get<std::string>();
  for (const json& entry : j.at("topk")) {
    if (!entry.is_array() || entry.size() != 2) {
      throw json::type_error::create(302, "topk entries must be [token, logprob]", &entry);
    }
    s.topk.push_back({entry[0].get<int64_t>(), entry[1].get<double>()});
  }
  s.watched_rank = j.at("watched_rank").get<int64_t>();
  s.censored = j.at("censored").get<bool>();
  s.entropy = j.at("entropy").get<double>();
  s.step_wall_time = j.at("step_wall_time").get<double>();
  if (auto it = j.find("probe"); it != j.end()) {
    ProbeBranch b;
    b.suffix = it->at("suffix").get<std::string>();
    b.answer = AnswerFromJson(it->at("answer"));
    probe = std::move(b);
  }
  return s;
}

}  // namespace

void TraceFile::Validate() const {
  const TraceHeader& h = header;
  if (h.vocab_size < 1) Integrity("vocab_size must be >= 1");
  if (h.watched_token < 0 || h.watched_token >= h.vocab_size) {
    Integrity("watched token outside vocabulary");
  }
  if (h.step_count != static_cast<int64_t>(steps.size())) {
    Integrity("header declares " + std::to_string(h.step_count) +
              " steps but " + std::to_string(steps.size()) + " present");
  }
  auto check_token = [&](TokenId id, size_t step) {
    if (id < 0 || id >= h.vocab_size) {
      Integrity("step " + std::to_string(step) + ": token id " +
                std::to_string(id) + " outside vocabulary");
    }
  };
  std::unordered_set<TokenId> seen;
  for (size_t i = 0; i < steps.size(); ++i) {
    const StepObservation& s = steps[i];
    const std::string where = "step " + std::to_string(i) + ": ";
    if (s.t != static_cast<int64_t>(i)) Integrity(where + "step indices must run 0, 1, 2, ...");
    check_token(s.chosen_token, i);
    seen.clear();
    for (size_t k = 0; k < s.topk.size(); ++k) {
      check_token(s.topk[k].token, i);
      if (!std::isfinite(s.topk[k].logprob)) Integrity(where + "non-finite logprob");
      if (!seen.insert(s.topk[k].token).second) Integrity(where + "duplicate top-K token");
      if (k > 0 && s.topk[k].logprob > s.topk[k - 1].logprob) {
        Integrity(where + "top-K not sorted by descending logprob");
      }
    }
    if (s.watched_rank < 0) Integrity(where + "negative rank");
    if (!s.censored && s.watched_rank >= h.vocab_size) {
      Integrity(where + "rank outside vocabulary");
    }
    if (!(s.entropy >= 0.0) || !std::isfinite(s.entropy)) Integrity(where + "bad entropy");
    if (!(s.step_wall_time >= 0.0) || !std::isfinite(s.step_wall_time)) {
      Integrity(where + "bad step_wall_time");
    }
  }
  if (h.natural_stop) {
    const int64_t ns = *h.natural_stop;
    if (ns < 0 || ns + 1 != static_cast<int64_t>(steps.size())) {
      Integrity("natural_stop must be the final step");
    }
    if (steps[static_cast<size_t>(ns)].chosen_token != h.watched_token) {
      Integrity("natural_stop step does not emit the watched token");
    }
  }
  for (const auto& [step, branch] : probe_branches) {
    if (step < 0 || step >= static_cast<int64_t>(steps.size())) {
      Integrity("probe branch at step " + std::to_string(step) + " outside trace");
    }
    if (branch.answer.tokens < 0) Integrity("negative probe answer length");
  }
}

std::string SerializeTrace(const TraceFile& trace) {
  std::string out;
  out.reserve(256 + trace.steps.size() * (96 + 32 * (trace.steps.empty() ? 0 : trace.steps[0].topk.size())));
  AppendHeader(out, trace.header);
  for (const StepObservation& s : trace.steps) {
    const auto it = trace.probe_branches.find(s.t);
    AppendStep(out, s, it == trace.probe_branches.end() ? nullptr : &it->second);
  }
  return out;
}

TraceFile ParseTrace(std::string_view text, std::string_view origin) {
  TraceFile trace;
  size_t line_no = 0;
  size_t pos = 0;
  bool have_header = false;
  while (pos < text.size()) {
    const size_t eol = text.find('\n', pos);
    const bool terminated = eol != std::string_view::npos;
    const std::string_view line =
        text.substr(pos, terminated ? eol - pos : std::string_view::npos);
    const size_t line_offset = pos;
    pos = terminated ? eol + 1 : text.size();
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      const std::string msg = where + ": offset " +
                              std::to_string(line_offset + e.byte) + ": " + e.what();
      if (!terminated) Integrity("truncated final record at " + msg);
      throw Error(ErrorCode::kMalformedTrace, "malformed trace at " + msg);
    }
    try {
      if (!have_header) {
        trace.header = HeaderFromJson(j);
        have_header = true;
      } else {
        std::optional<ProbeBranch> probe;
        StepObservation s = StepFromJson(j, probe);
        if (probe) trace.probe_branches.emplace(s.t, std::move(*probe));
        trace.steps.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kMalformedTrace, "malformed trace at " + where +
                                                  ": offset " + std::to_string(line_offset) +
                                                  ": " + e.what());
    }
  }
  if (!have_header) Integrity(std::string(origin) + ": missing header record");
  trace.Validate();
  return trace;
}

TraceFile ReadTraceFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open trace " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return ParseTrace(buf.str(), path.string());
}

void WriteTraceFile(const TraceFile& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write trace " + path.string());
  out << SerializeTrace(trace);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

TraceStream::TraceStream(std::shared_ptr<const TraceFile> trace)
    : trace_(std::move(trace)) {}

std::optional<StepObservation> TraceStream::Next() {
  if (cursor_ >= trace_->steps.size()) return std::nullopt;
  return trace_->steps[cursor_++];
}

std::string TraceStream::ForkForProbe(std::string_view /*probe_suffix*/) {
  if (cursor_ == 0) {
    throw Error(ErrorCode::kUnsupportedProbe, "probe requested before the first step");
  }
  const int64_t step = static_cast<int64_t>(cursor_ - 1);
  const auto it = trace_->probe_branches.find(step);
  if (it == trace_->probe_branches.end()) {
    throw Error(ErrorCode::kUnsupportedProbe,
                "trace has no recorded probe branch at step " + std::to_string(step));
  }
  return it->second.answer.text;
}

AnswerSegment TraceStream::Answer(int64_t stop_step, bool injected, int64_t max_tokens) {
  AnswerSegment answer;
  if (!injected) {
    if (trace_->header.natural_stop && stop_step == *trace_->header.natural_stop) {
      answer = trace_->header.final_answer;
    }
  } else {
    // A branch at step s holds the answer produced with the terminator forced
    // in place of token s, so the latest branch at or before the stop applies.
    auto it = trace_->probe_branches.upper_bound(stop_step);
    if (it != trace_->probe_branches.begin()) answer = std::prev(it)->second.answer;
  }
  if (answer.tokens > max_tokens) {
    // Budget ran out mid-answer; the recorded text was never completed.
    return {"", std::max<int64_t>(0, max_tokens)};
  }
  return answer;
}

TokenId TraceStream::watched_token() const { return trace_->header.watched_token; }

int64_t TraceStream::vocab_size() const { return trace_->header.vocab_size; }

std::optional<int64_t> TraceStream::full_length() const {
  if (!trace_->header.natural_stop) return std::nullopt;
  return *trace_->header.natural_stop + 1;
}

std::unique_ptr<TraceStream> OpenTrace(const std::filesystem::path& path) {
  auto trace = std::make_shared<const TraceFile>(ReadTraceFile(path));
  return std::make_unique<TraceStream>(std::move(trace));
}

}  // namespace rankstop::stream
