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

#include "rankstop/controller.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>

#include "rankstop/error.h"
#include "rankstop/eval.h"

namespace rankstop::controller {
namespace {

using policy::StopDecision;
using policy::StopReason;

// Accumulates elapsed clock time into one bucket for the scope's lifetime.
class Bucket {
 public:
  Bucket(Clock& clock, double& sink) : clock_(clock), sink_(sink), start_(clock.Now()) {}
  ~Bucket() { sink_ += clock_.Now() - start_; }
  Bucket(const Bucket&) = delete;
  Bucket& operator=(const Bucket&) = delete;

 private:
  Clock& clock_;
  double& sink_;
  double start_;
};

StopDecision Fired(int64_t t, const StepObservation& obs, int64_t tau) {
  StopDecision d;
  d.t = t;
  d.stop = true;
  d.tau = tau;
  d.rank = obs.watched_rank;
  d.entropy = obs.entropy;
  d.reason = StopReason::kThresholdFired;
  return d;
}

}  // namespace

double SteadyClock::Now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

double LogicalClock::Now() { return static_cast<double>(++reads_) * tick_; }

ClockFactory SteadyClockFactory() {
  return [] { return std::make_unique<SteadyClock>(); };
}

ClockFactory LogicalClockFactory(double tick) {
  return [tick] { return std::make_unique<LogicalClock>(tick); };
}

GenerationRecord RunGeneration(stream::ObservationStream& source, const std::string& sample_id,
                               const RunConfig& config, Clock& clock,
                               std::optional<int64_t> full_length) {
  const policy::PolicyConfig& pc = config.policy_config;
  pc.Validate(source.vocab_size());
  config.baseline.Validate();
  if (config.max_new_tokens < 1) throw Error(ErrorCode::kConfig, "max_new_tokens must be >= 1");
  if (pc.watched_token != source.watched_token()) {
    throw Error(ErrorCode::kConfig, "policy watches token " + std::to_string(pc.watched_token) +
                                        " but the source terminates on " +
                                        std::to_string(source.watched_token()));
  }
  if (!full_length) full_length = source.full_length();
  std::optional<int64_t> ratio_stop;
  if (config.policy == PolicyKind::kFixedRatio) {
    if (!full_length) {
      throw Error(ErrorCode::kConfig,
                  "fixed_ratio needs the sample's full-reasoning length reference");
    }
    ratio_stop = policy::FixedRatioStopStep(*full_length, config.baseline.ratio);
  }

  GenerationRecord rec;
  rec.sample_id = sample_id;
  rec.policy_name = config.PolicyName();
  rec.config = config;
  rec.full_length = full_length;

  Timing& tm = rec.timing;
  std::vector<std::string> probe_answers;
  int64_t consumed = 0;
  bool stopped = false;

  while (!stopped) {
    std::optional<StepObservation> obs;
    try {
      Bucket gen(clock, tm.t_gen);
      obs = source.Next();
    } catch (const Error& e) {
      rec.complete = false;
      rec.error = e.what();
      break;
    }
    if (!obs) {
      // Source ended without a terminator.
      rec.final_decision.t = consumed - 1;
      rec.final_decision.reason = StopReason::kBudgetExhausted;
      rec.stop_step = consumed - 1;
      rec.reasoning_tokens = consumed;
      break;
    }
    const int64_t t = consumed++;
    rec.rank_trajectory.emplace_back(t, obs->watched_rank);
    rec.entropy_trajectory.emplace_back(t, obs->entropy);
    const bool natural = obs->chosen_token == pc.watched_token;

    std::optional<StopDecision> fired;
    if (config.policy == PolicyKind::kAnswerConvergence && !natural && t > 0 &&
        t % config.baseline.segment_len == 0) {
      std::string answer;
      try {
        Bucket gen(clock, tm.t_gen);
        answer = source.ForkForProbe(config.probe_suffix);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kUnsupportedProbe) {
          throw Error(ErrorCode::kPolicyUnavailable,
                      "answer_convergence unavailable for sample " + sample_id + ": " + e.what());
        }
        rec.complete = false;
        rec.error = e.what();
        break;
      }
      Bucket metric(clock, tm.t_metric);
      probe_answers.push_back(eval::ParseAnswer(answer, config.task_kind));
      if (policy::AnswerConvergenceStop(probe_answers, config.baseline.convergence_k)) {
        fired = Fired(t, *obs, 0);
      }
    } else {
      Bucket metric(clock, tm.t_metric);
      switch (config.policy) {
        case PolicyKind::kSyncThink:
          if (t % pc.check_interval == 0) {
            const StopDecision d = policy::ShouldStop(t, *obs, pc);
            rec.trail.push_back(d);
            if (d.stop) fired = d;
          }
          break;
        case PolicyKind::kNone:
          if (t == 0) fired = Fired(t, *obs, 0);
          break;
        case PolicyKind::kFixedRatio:
          if (t >= *ratio_stop) fired = Fired(t, *obs, *ratio_stop);
          break;
        case PolicyKind::kFull:
        case PolicyKind::kAnswerConvergence:
          break;
      }
    }

    if (natural) {
      // Natural emission wins over a simultaneous firing: never insert twice.
      rec.final_decision = fired.value_or(StopDecision{});
      rec.final_decision.t = t;
      rec.final_decision.rank = obs->watched_rank;
      rec.final_decision.entropy = obs->entropy;
      rec.final_decision.stop = true;
      rec.final_decision.reason = StopReason::kNaturalTermination;
      rec.injected = false;
      stopped = true;
    } else if (fired) {
      rec.final_decision = *fired;
      rec.injected = true;
      stopped = true;
    } else if (t + 1 >= config.max_new_tokens) {
      rec.final_decision.t = t;
      rec.final_decision.rank = obs->watched_rank;
      rec.final_decision.entropy = obs->entropy;
      rec.final_decision.reason = StopReason::kBudgetExhausted;
      rec.stop_step = t;
      rec.reasoning_tokens = t + 1;
      break;
    }
    if (stopped) {
      rec.stop_step = t;
      rec.reasoning_tokens = t + 1;  // terminator included
    }
  }

  if (stopped && rec.complete) {
    const int64_t remaining = config.max_new_tokens - rec.reasoning_tokens;
    try {
      Bucket gen(clock, tm.t_gen);
      const stream::AnswerSegment seg =
          remaining > 0 ? source.Answer(rec.stop_step, rec.injected, remaining)
                        : stream::AnswerSegment{};
      rec.answer_text = seg.text;
      rec.answer_tokens = std::clamp<int64_t>(seg.tokens, 0, std::max<int64_t>(0, remaining));
    } catch (const Error& e) {
      rec.complete = false;
      rec.error = e.what();
    }
  }
  if (!rec.complete) {
    rec.final_decision.reason = StopReason::kNotTriggered;
    rec.reasoning_tokens = consumed;
    rec.stop_step = consumed - 1;
  }
  rec.total_tokens = rec.reasoning_tokens + rec.answer_tokens;
  {
    Bucket eval_time(clock, tm.t_eval);
    rec.normalized_answer = eval::ParseAnswer(rec.answer_text, config.task_kind);
  }
  tm.t_total = tm.t_gen + tm.t_metric + tm.t_eval;
  return rec;
}

std::vector<GenerationRecord> RunBatch(std::span<const BatchItem> items,
                                       std::span<const RunConfig> configs, int parallelism,
                                       const ClockFactory& clock_factory) {
  if (parallelism < 1) throw Error(ErrorCode::kConfig, "parallelism must be >= 1");
  const size_t jobs = items.size() * configs.size();
  std::vector<GenerationRecord> out(jobs);
  std::atomic<size_t> next{0};

  auto worker = [&] {
    for (size_t job = next++; job < jobs; job = next++) {
      const BatchItem& item = items[job / configs.size()];
      RunConfig config = configs[job % configs.size()];
      if (item.task_kind) config.task_kind = *item.task_kind;
      GenerationRecord& rec = out[job];
      try {
        auto clock = clock_factory();
        auto source = item.open();
        rec = RunGeneration(*source, item.sample_id, config, *clock, item.full_length);
      } catch (const std::exception& e) {
        rec = GenerationRecord{};
        rec.sample_id = item.sample_id;
        rec.policy_name = config.PolicyName();
        rec.config = config;
        rec.full_length = item.full_length;
        rec.complete = false;
        rec.error = e.what();
      }
    }
  };

  const size_t threads = std::min<size_t>(static_cast<size_t>(parallelism), std::max<size_t>(jobs, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  return out;
}

}  // namespace rankstop::controller
