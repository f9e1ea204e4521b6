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

#ifndef RANKSTOP_STREAM_H_
#define RANKSTOP_STREAM_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rankstop/observation.h"

namespace rankstop::stream {

struct AnswerSegment {
  std::string text;
  int64_t tokens = 0;

  bool operator==(const AnswerSegment&) const = default;
};

// A source of per-step observations for one sample. Single consumer; not
// thread-safe. Distinct instances are independent.
class ObservationStream {
 public:
  virtual ~ObservationStream() = default;

  // Next reasoning-phase observation, or nullopt once the source has nothing
  // more to emit. Throws Error(kSession) / Error(kIntegrity) on failure.
  virtual std::optional<StepObservation> Next() = 0;

  // Answer text the model gives if forced to answer after the most recently
  // returned step, leaving the main stream untouched. Throws
  // Error(kUnsupportedProbe) when the source cannot branch at this step.
  virtual std::string ForkForProbe(std::string_view probe_suffix) = 0;

  // Generates the answer phase once reasoning ended at `stop_step`.
  // `injected` says whether the terminator was forced at that step.
  virtual AnswerSegment Answer(int64_t stop_step, bool injected,
                               int64_t max_tokens) = 0;

  virtual TokenId watched_token() const = 0;
  virtual int64_t vocab_size() const = 0;

  // Reasoning length (terminator included) of an unconstrained run, when the
  // source knows it without generating.
  virtual std::optional<int64_t> full_length() const { return std::nullopt; }
};

// ---------------------------------------------------------------------------
// Trace files
// ---------------------------------------------------------------------------

struct TraceHeader {
  std::string tokenizer;
  int64_t vocab_size = 0;
  TokenId watched_token = 0;
  std::string source_kind;
  uint64_t seed = 0;
  int64_t step_count = 0;
  std::optional<int64_t> natural_stop;
  AnswerSegment final_answer;

  bool operator==(const TraceHeader&) const = default;
};

struct ProbeBranch {
  std::string suffix;
  AnswerSegment answer;

  bool operator==(const ProbeBranch&) const = default;
};

struct TraceFile {
  TraceHeader header;
  std::vector<StepObservation> steps;
  std::map<int64_t, ProbeBranch> probe_branches;

  // Throws Error(kIntegrity).
  void Validate() const;

  bool operator==(const TraceFile&) const = default;
};

// Line-delimited JSON, header first. Reals use 17 significant digits.
std::string SerializeTrace(const TraceFile& trace);
// `origin` is used in error messages only.
TraceFile ParseTrace(std::string_view text, std::string_view origin = "<memory>");
TraceFile ReadTraceFile(const std::filesystem::path& path);
void WriteTraceFile(const TraceFile& trace, const std::filesystem::path& path);

class TraceStream final : public ObservationStream {
 public:
  explicit TraceStream(std::shared_ptr<const TraceFile> trace);

  std::optional<StepObservation> Next() override;
  std::string ForkForProbe(std::string_view probe_suffix) override;
  AnswerSegment Answer(int64_t stop_step, bool injected,
                       int64_t max_tokens) override;
  TokenId watched_token() const override;
  int64_t vocab_size() const override;
  std::optional<int64_t> full_length() const override;

  const TraceFile& trace() const { return *trace_; }

 private:
  std::shared_ptr<const TraceFile> trace_;
  size_t cursor_ = 0;
};

// Reads and validates the whole file before returning; no partial handles.
std::unique_ptr<TraceStream> OpenTrace(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic four-phase traces
// ---------------------------------------------------------------------------

// Rank levels are log10(rank + 1).
struct RankLevels {
  double initial = 1.0;
  double descent_floor = 4.0;
  double recovery = 3.0;
  double plateau_low = 2.5;
  double plateau_high = 3.5;
  double ascent_target = 0.0;

  bool operator==(const RankLevels&) const = default;
};

struct EntropyPhase {
  double mean = 0.0;
  double jitter = 0.0;

  bool operator==(const EntropyPhase&) const = default;
};

struct SyntheticPhaseSpec {
  std::array<int64_t, 4> phase_lengths{20, 40, 200, 40};
  RankLevels rank_levels;
  std::array<EntropyPhase, 4> entropy_profile{
      EntropyPhase{1.0, 0.3}, EntropyPhase{1.6, 0.3}, EntropyPhase{2.4, 0.4},
      EntropyPhase{0.3, 0.2}};
  uint64_t seed = 0;

  // Source shape.
  int64_t vocab_size = 152064;
  TokenId watched_token = 151649;
  int64_t topk = 8;

  // Recorded answer-forcing probes every probe_interval steps. Probe answers
  // equal `gold` once progress (step / length) reaches `saturation`, and a
  // seed-derived wrong answer before that.
  int64_t probe_interval = 16;
  std::string probe_suffix = "\nFinal answer:";
  std::string gold = "42";
  double saturation = 0.6;
  bool final_correct = true;

  int64_t length() const;
  // Planted phase boundaries b1 < b2 < b3 (start steps of phases II-IV).
  std::array<int64_t, 3> boundaries() const;

  // Throws Error(kConfig).
  void Validate() const;

  bool operator==(const SyntheticPhaseSpec&) const = default;
};

TraceFile GenerateSynthetic(const SyntheticPhaseSpec& spec);

// Shape predicates the generator guarantees; empty string when all hold,
// otherwise a description of the first violation.
std::string CheckSyntheticShape(const SyntheticPhaseSpec& spec,
                                const TraceFile& trace);

// ---------------------------------------------------------------------------
// OpenAI-compatible endpoint client
// ---------------------------------------------------------------------------

inline constexpr int64_t kMaxNewTokens = 8192;

struct EndpointConfig {
  std::string api_base;  // e.g. http://127.0.0.1:8000/v1
  std::string api_key;
  std::string model;
  int64_t top_logprobs = 513;
  // Terminator as the server spells it, and the id it is given in
  // observations. Other tokens get session-local ids above vocab_size.
  std::string watched_text = "</think>";
  TokenId watched_token = 151649;
  int64_t vocab_size = 152064;
  int64_t max_new_tokens = kMaxNewTokens;
  double timeout_seconds = 600.0;

  // Fills api_base / api_key from SYNCTHINK_API_BASE / SYNCTHINK_API_KEY
  // when they are empty.
  void ApplyEnvironment();
};

struct ChatMessage {
  std::string role;
  std::string content;
};

class EndpointSession;

// Opens generation sessions against one endpoint. Safe for concurrent use.
class SessionFactory {
 public:
  explicit SessionFactory(EndpointConfig config) : config_(std::move(config)) {}

  // Starts a streaming generation. Blocks until the first chunk arrives so
  // capability problems (no per-token logprobs) surface here as
  // Error(kCapability).
  std::unique_ptr<EndpointSession> Open(std::vector<ChatMessage> prompt) const;

  const EndpointConfig& config() const { return config_; }

 private:
  EndpointConfig config_;
};

// Validates the configuration: top_logprobs must be at least t_max + 1 so a
// censored rank (= K) can never satisfy rank <= tau <= t_max.
SessionFactory ConnectEndpoint(EndpointConfig config, int64_t policy_t_max);

class EndpointSession final : public ObservationStream {
 public:
  ~EndpointSession() override;

  std::optional<StepObservation> Next() override;
  std::string ForkForProbe(std::string_view probe_suffix) override;
  AnswerSegment Answer(int64_t stop_step, bool injected,
                       int64_t max_tokens) override;
  TokenId watched_token() const override;
  int64_t vocab_size() const override;

  // Raw top-K list as received for the most recent step (before id mapping
  // this is what the server sent).
  const std::vector<TokenLogprob>& last_topk() const;
  // Everything observed so far, as a replayable trace.
  TraceFile Recording() const;
  int64_t requests_issued() const;

 private:
  friend class SessionFactory;
  struct Impl;
  explicit EndpointSession(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace rankstop::stream

#endif  // RANKSTOP_STREAM_H_
