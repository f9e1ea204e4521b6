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

// rankstop: batch runs, parameter sweeps, trajectory analysis, saliency
// reports and synthetic trace generation.
//
// Exit status: 0 success, 1 runtime failure, 2 usage error. Usage errors are
// raised before any output file is created.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rankstop/controller.h"
#include "rankstop/error.h"
#include "rankstop/eval.h"
#include "rankstop/phase_analysis.h"
#include "rankstop/record.h"
#include "rankstop/saliency.h"
#include "rankstop/stream.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rankstop::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string IsoNow() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> ParseGrid(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(flag + " must list at least one value");
  return out;
}

// Regular files named on the command line, with directories expanded to
// their *.jsonl entries in name order.
std::vector<fs::path> ExpandTraces(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const std::string& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw UsageError("trace input not found: " + a);
    }
  }
  if (out.empty()) throw UsageError("no trace files found");
  return out;
}

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  uint64_t seed = 0;
  std::string started_at = IsoNow();
};

void WriteText(const fs::path& path, const std::string& text, Manifest& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
  manifest.outputs.push_back(path.string());
}

void FinishManifest(const fs::path& dir, Manifest& m) {
  const fs::path path = dir / "manifest.json";
  json j = {
      {"command", m.command},       {"argv", m.argv},
      {"tool", "rankstop"},         {"version", RANKSTOP_VERSION},
      {"config", m.config},         {"inputs", m.inputs},
      {"outputs", m.outputs},       {"seed", m.seed},
      {"started_at", m.started_at}, {"finished_at", IsoNow()},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void PrepareOutDir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create output directory " + out + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// run / sweep
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string source = "trace";
  std::vector<std::string> traces;
  std::string dataset;
  std::string task_kind = "numeric";
  std::string policy = "syncthink";
  double lambda = policy::kDefaultLambda;
  int64_t t_max = policy::kDefaultTMax;
  int64_t min_steps = policy::kDefaultMinSteps;
  int64_t check_interval = policy::kDefaultCheckInterval;
  int64_t watched_token = 151649;
  double ratio = 1.0;
  int64_t k = policy::kDefaultConvergenceK;
  int64_t segment_len = policy::kDefaultSegmentLen;
  int64_t max_new_tokens = stream::kMaxNewTokens;
  std::string probe_suffix = "\nFinal answer:";
  std::string reference;
  std::string out;
  int parallelism = 1;
  std::string clock = "wall";
  double alpha_cost = 0.0;
  uint64_t seed = 0;
  // endpoint source
  std::string api_base;
  std::string api_key;
  std::string model;
  int64_t top_logprobs = 513;
  std::string watched_text = "</think>";
  int64_t vocab_size = 152064;
  double timeout = 600.0;
};

void AddRunFlags(CLI::App* app, RunOptions& o) {
  app->add_option("--source", o.source, "Observation source")
      ->check(CLI::IsMember({"trace", "endpoint"}))
      ->capture_default_str();
  app->add_option("--traces", o.traces, "Trace files or directories (trace source)");
  app->add_option("--dataset", o.dataset, "Line-delimited samples (id, question, gold)");
  app->add_option("--task-kind", o.task_kind, "Default answer kind")
      ->check(CLI::IsMember({"numeric", "multiple_choice", "freeform"}))
      ->capture_default_str();
  app->add_option("--policy", o.policy, "Stopping policy")
      ->check(CLI::IsMember({"syncthink", "full", "none", "fixed_ratio", "answer_convergence"}))
      ->capture_default_str();
  app->add_option("--lambda", o.lambda, "Entropy sensitivity")->capture_default_str();
  app->add_option("--t-max", o.t_max, "Cap of the pacing term")->capture_default_str();
  app->add_option("--min-steps", o.min_steps, "First step the rank rule may fire")
      ->capture_default_str();
  app->add_option("--check-interval", o.check_interval, "Evaluate every N steps")
      ->capture_default_str();
  app->add_option("--watched-token", o.watched_token, "Terminator token id")
      ->capture_default_str();
  app->add_option("--ratio", o.ratio, "fixed_ratio fraction in (0, 1]")->capture_default_str();
  app->add_option("--k", o.k, "answer_convergence agreeing probes")->capture_default_str();
  app->add_option("--segment-len", o.segment_len, "answer_convergence probe spacing")
      ->capture_default_str();
  app->add_option("--max-new-tokens", o.max_new_tokens, "Generation budget")
      ->capture_default_str();
  app->add_option("--probe-suffix", o.probe_suffix, "Text appended after a forced terminator");
  app->add_option("--reference", o.reference,
                  "Records of a full-reasoning run supplying per-sample full lengths");
  app->add_option("--out", o.out, "Output directory")->required();
  app->add_option("--parallelism", o.parallelism, "Concurrent sessions")->capture_default_str();
  app->add_option("--clock", o.clock, "Timing source; logical makes records reproducible")
      ->check(CLI::IsMember({"wall", "logical"}))
      ->capture_default_str();
  app->add_option("--alpha-cost", o.alpha_cost, "Token cost weight in the report objective")
      ->capture_default_str();
  app->add_option("--seed", o.seed, "Recorded in the manifest")->capture_default_str();
  app->add_option("--api-base", o.api_base, "Endpoint base URL (or SYNCTHINK_API_BASE)");
  app->add_option("--api-key", o.api_key, "Endpoint key (or SYNCTHINK_API_KEY)");
  app->add_option("--model", o.model, "Model name sent to the endpoint");
  app->add_option("--top-logprobs", o.top_logprobs, "Alternatives requested per token")
      ->capture_default_str();
  app->add_option("--watched-text", o.watched_text, "Terminator spelling on the endpoint")
      ->capture_default_str();
  app->add_option("--vocab-size", o.vocab_size, "Tokenizer vocabulary size")
      ->capture_default_str();
  app->add_option("--timeout", o.timeout, "Endpoint timeout, seconds")->capture_default_str();
}

json RunConfigJson(const RunOptions& o) {
  return {{"source", o.source},
          {"traces", o.traces},
          {"dataset", o.dataset},
          {"task_kind", o.task_kind},
          {"policy", o.policy},
          {"lambda", o.lambda},
          {"t_max", o.t_max},
          {"min_steps", o.min_steps},
          {"check_interval", o.check_interval},
          {"watched_token", o.watched_token},
          {"ratio", o.ratio},
          {"k", o.k},
          {"segment_len", o.segment_len},
          {"max_new_tokens", o.max_new_tokens},
          {"probe_suffix", o.probe_suffix},
          {"reference", o.reference},
          {"parallelism", o.parallelism},
          {"clock", o.clock},
          {"alpha_cost", o.alpha_cost},
          {"api_base", o.api_base},
          {"model", o.model},
          {"top_logprobs", o.top_logprobs},
          {"watched_text", o.watched_text},
          {"vocab_size", o.vocab_size}};
}

RunConfig BaseConfig(const RunOptions& o) {
  RunConfig c;
  c.policy = *ParsePolicyKind(o.policy);
  c.policy_config.lambda = o.lambda;
  c.policy_config.t_max = o.t_max;
  c.policy_config.min_steps = o.min_steps;
  c.policy_config.check_interval = o.check_interval;
  c.policy_config.watched_token = o.watched_token;
  c.baseline.ratio = o.ratio;
  c.baseline.convergence_k = o.k;
  c.baseline.segment_len = o.segment_len;
  c.max_new_tokens = o.max_new_tokens;
  c.task_kind = *ParseTaskKind(o.task_kind);
  c.probe_suffix = o.probe_suffix;
  return c;
}

void ValidateConfig(const RunConfig& c) {
  try {
    c.policy_config.Validate();
    c.baseline.Validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (c.max_new_tokens < 1) throw UsageError("--max-new-tokens must be >= 1");
}

// Inputs resolved and checked before anything is written.
struct Prepared {
  std::vector<controller::BatchItem> items;
  std::optional<eval::Dataset> dataset;
  std::vector<std::string> inputs;
  std::unique_ptr<stream::SessionFactory> factory;
};

Prepared Prepare(const RunOptions& o, const std::vector<RunConfig>& configs) {
  if (o.parallelism < 1) throw UsageError("--parallelism must be >= 1");
  Prepared p;
  const TaskKind default_kind = *ParseTaskKind(o.task_kind);
  if (!o.dataset.empty()) {
    if (!fs::exists(o.dataset)) throw UsageError("dataset not found: " + o.dataset);
    p.dataset = eval::LoadDataset(o.dataset, default_kind, fs::path(o.dataset).stem().string());
    for (const auto& err : p.dataset->errors) {
      std::cerr << "warning: " << o.dataset << ":" << err.line << ": " << err.message << '\n';
    }
    p.inputs.push_back(o.dataset);
  }
  std::map<std::string, TaskKind> kinds;
  if (p.dataset) {
    for (const auto& s : p.dataset->samples) kinds.emplace(s.id, s.task_kind);
  }

  std::map<std::string, int64_t> reference;
  if (!o.reference.empty()) {
    if (!fs::exists(o.reference)) throw UsageError("reference records not found: " + o.reference);
    for (const GenerationRecord& r : ReadRecordsFile(o.reference)) {
      if (r.complete && !r.injected && r.final_decision.reason == policy::StopReason::kNaturalTermination) {
        reference[r.sample_id] = r.reasoning_tokens;
      }
    }
    p.inputs.push_back(o.reference);
  }
  const bool needs_full_length = std::any_of(configs.begin(), configs.end(), [](const RunConfig& c) {
    return c.policy == PolicyKind::kFixedRatio;
  });

  auto lookup_kind = [&](const std::string& id) -> std::optional<TaskKind> {
    const auto it = kinds.find(id);
    if (it == kinds.end()) return std::nullopt;
    return it->second;
  };

  if (o.source == "trace") {
    if (o.traces.empty()) throw UsageError("--traces is required with --source trace");
    for (const fs::path& path : ExpandTraces(o.traces)) {
      auto trace = std::make_shared<const stream::TraceFile>(stream::ReadTraceFile(path));
      if (trace->header.watched_token != o.watched_token) {
        throw UsageError("trace " + path.string() + " watches token " +
                         std::to_string(trace->header.watched_token) + ", not --watched-token " +
                         std::to_string(o.watched_token));
      }
      const std::string id = path.stem().string();
      std::optional<int64_t> full;
      if (const auto it = reference.find(id); it != reference.end()) full = it->second;
      if (!full && trace->header.natural_stop) full = *trace->header.natural_stop + 1;
      if (needs_full_length && !full) {
        throw UsageError("fixed_ratio needs a full-length reference for " + id +
                         " (trace has no natural stop; pass --reference)");
      }
      p.items.push_back({id, [trace] { return std::make_unique<stream::TraceStream>(trace); },
                         full, lookup_kind(id)});
      p.inputs.push_back(path.string());
    }
    return p;
  }

  // Endpoint source.
  if (!p.dataset) throw UsageError("--dataset is required with --source endpoint");
  stream::EndpointConfig ec;
  ec.api_base = o.api_base;
  ec.api_key = o.api_key;
  ec.model = o.model;
  ec.top_logprobs = o.top_logprobs;
  ec.watched_text = o.watched_text;
  ec.watched_token = o.watched_token;
  ec.vocab_size = o.vocab_size;
  ec.max_new_tokens = o.max_new_tokens;
  ec.timeout_seconds = o.timeout;
  ec.ApplyEnvironment();
  if (ec.api_base.empty()) throw UsageError("--api-base or SYNCTHINK_API_BASE is required");
  int64_t t_max = 0;
  for (const RunConfig& c : configs) t_max = std::max(t_max, c.policy_config.t_max);
  try {
    p.factory = std::make_unique<stream::SessionFactory>(stream::ConnectEndpoint(ec, t_max));
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const stream::SessionFactory* factory = p.factory.get();
  for (const eval::Sample& s : p.dataset->samples) {
    std::optional<int64_t> full;
    if (const auto it = reference.find(s.id); it != reference.end()) full = it->second;
    if (needs_full_length && !full) {
      throw UsageError("fixed_ratio needs --reference records covering sample " + s.id);
    }
    const std::string question = s.question;
    p.items.push_back({s.id,
                       [factory, question]() -> std::unique_ptr<stream::ObservationStream> {
                         return factory->Open({{"user", question}});
                       },
                       full, s.task_kind});
  }
  return p;
}

controller::ClockFactory MakeClockFactory(const RunOptions& o) {
  return o.clock == "logical" ? controller::LogicalClockFactory()
                              : controller::SteadyClockFactory();
}

// Records whose sample id resolves against the dataset; others are reported.
std::vector<GenerationRecord> Scorable(const std::vector<GenerationRecord>& records,
                                       const eval::Dataset& ds) {
  std::set<std::string> ids;
  for (const auto& s : ds.samples) ids.insert(s.id);
  std::vector<GenerationRecord> out;
  std::set<std::string> missing;
  for (const auto& r : records) {
    if (ids.count(r.sample_id)) {
      out.push_back(r);
    } else {
      missing.insert(r.sample_id);
    }
  }
  for (const auto& id : missing) std::cerr << "warning: no dataset entry for sample " << id << '\n';
  return out;
}

int CmdRun(const RunOptions& o, Manifest& m) {
  const RunConfig cfg = BaseConfig(o);
  ValidateConfig(cfg);
  Prepared p = Prepare(o, {cfg});
  m.config = RunConfigJson(o);
  m.inputs = p.inputs;
  m.seed = o.seed;

  PrepareOutDir(o.out);
  const std::vector<RunConfig> configs = {cfg};
  const auto records = controller::RunBatch(p.items, configs, o.parallelism, MakeClockFactory(o));
  const fs::path dir(o.out);
  WriteText(dir / "records.jsonl", SerializeRecords(records), m);

  int64_t incomplete = 0;
  for (const auto& r : records) {
    if (!r.complete) {
      ++incomplete;
      std::cerr << "warning: sample " << r.sample_id << " incomplete: " << r.error << '\n';
    }
  }
  if (p.dataset) {
    const auto scorable = Scorable(records, *p.dataset);
    if (!scorable.empty()) {
      const auto report = eval::Score(scorable, p.dataset->samples, o.alpha_cost);
      WriteText(dir / "report.csv", eval::FormatReport(report, eval::ReportFormat::kTabular), m);
      WriteText(dir / "report.jsonl", eval::FormatReport(report, eval::ReportFormat::kStructured),
                m);
    }
  }
  FinishManifest(dir, m);
  std::cout << records.size() << " records written to " << (dir / "records.jsonl").string();
  if (incomplete > 0) std::cout << " (" << incomplete << " incomplete)";
  std::cout << '\n';
  return kExitOk;
}


struct SweepOptions {
  std::string lambda_grid;
  std::string ratio_grid;
};

struct SweepPoint {
  std::string parameter;
  std::string value;
  RunConfig config;
};

std::string FormatValue(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

int CmdSweep(const RunOptions& o, const SweepOptions& s, Manifest& m) {
  if (s.lambda_grid.empty() == s.ratio_grid.empty()) {
    throw UsageError("pass exactly one of --lambda-grid or --ratio-grid");
  }
  const bool by_lambda = !s.lambda_grid.empty();
  const std::string parameter = by_lambda ? "lambda" : "ratio";
  const std::vector<double> grid = ParseGrid(by_lambda ? s.lambda_grid : s.ratio_grid,
                                             by_lambda ? "--lambda-grid" : "--ratio-grid");
  std::vector<SweepPoint> points;
  for (double v : grid) {
    RunConfig c = BaseConfig(o);
    if (by_lambda) {
      c.policy = PolicyKind::kSyncThink;
      c.policy_config.lambda = v;
    } else {
      c.policy = PolicyKind::kFixedRatio;
      c.baseline.ratio = v;
    }
    ValidateConfig(c);
    points.push_back({parameter, FormatValue(v), c});
  }
  if (!by_lambda) {
    RunConfig full = BaseConfig(o);
    full.policy = PolicyKind::kFull;
    points.push_back({"reference", "full", full});
  }
  std::vector<RunConfig> configs;
  for (const auto& p : points) configs.push_back(p.config);
  Prepared prep = Prepare(o, configs);
  m.config = RunConfigJson(o);
  m.config["lambda_grid"] = s.lambda_grid;
  m.config["ratio_grid"] = s.ratio_grid;
  m.inputs = prep.inputs;
  m.seed = o.seed;

  PrepareOutDir(o.out);
  const fs::path dir(o.out);
  const auto records = controller::RunBatch(prep.items, configs, o.parallelism, MakeClockFactory(o));
  WriteText(dir / "records.jsonl", SerializeRecords(records), m);

  std::string table =
      "parameter,value,policy,samples,incomplete,flagged,mean_stop_step,mean_tokens,top1\n";
  for (size_t pi = 0; pi < points.size(); ++pi) {
    std::vector<GenerationRecord> subset;
    for (size_t j = pi; j < records.size(); j += points.size()) subset.push_back(records[j]);
    int64_t incomplete = 0;
    double stop_sum = 0.0;
    double token_sum = 0.0;
    for (const auto& r : subset) {
      if (!r.complete) {
        ++incomplete;
        continue;
      }
      stop_sum += static_cast<double>(r.stop_step);
      token_sum += static_cast<double>(r.total_tokens);
    }
    const int64_t done = static_cast<int64_t>(subset.size()) - incomplete;
    std::string top1;
    if (prep.dataset) {
      const auto scorable = Scorable(subset, *prep.dataset);
      if (!scorable.empty()) {
        const auto report = eval::Score(scorable, prep.dataset->samples, o.alpha_cost);
        int64_t n = 0;
        int64_t correct = 0;
        for (const auto& row : report.rows) {
          n += row.samples;
          correct += row.correct;
        }
        if (n > 0) top1 = FormatValue(100.0 * static_cast<double>(correct) / static_cast<double>(n));
        const fs::path point_dir = dir / "points" / (points[pi].parameter + "_" + points[pi].value);
        PrepareOutDir(point_dir.string());
        WriteText(point_dir / "report.csv", eval::FormatReport(report, eval::ReportFormat::kTabular),
                  m);
      }
    }
    table += points[pi].parameter + ',' + points[pi].value + ',' + points[pi].config.PolicyName() +
             ',' + std::to_string(subset.size()) + ',' + std::to_string(incomplete) + ',' +
             (incomplete > 0 ? "1" : "0") + ',' +
             (done > 0 ? FormatValue(stop_sum / static_cast<double>(done)) : std::string()) + ',' +
             (done > 0 ? FormatValue(token_sum / static_cast<double>(done)) : std::string()) + ',' +
             top1 + '\n';
    if (incomplete > 0) {
      std::cerr << "warning: " << points[pi].parameter << "=" << points[pi].value << " has "
                << incomplete << " incomplete records\n";
    }
  }
  WriteText(dir / "sweep.csv", table, m);
  FinishManifest(dir, m);
  std::cout << points.size() << " sweep points written to " << (dir / "sweep.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  std::vector<std::string> traces;
  std::vector<std::string> records;
  std::string dataset;
  std::string task_kind = "numeric";
  int64_t grid = phase_analysis::kDefaultGridSize;
  double epsilon = phase_analysis::kDefaultEpsilon;
  int64_t window = phase_analysis::kDefaultSmoothingWindow;
  std::string out;
};

phase_analysis::RankTrajectory TraceTrajectory(const stream::TraceFile& trace) {
  const size_t end = trace.header.natural_stop
                         ? std::min(trace.steps.size(), static_cast<size_t>(*trace.header.natural_stop + 1))
                         : trace.steps.size();
  phase_analysis::RankTrajectory out;
  out.reserve(end);
  for (size_t t = 0; t < end; ++t) {
    out.emplace_back(static_cast<int64_t>(t), trace.steps[t].watched_rank);
  }
  return out;
}

int CmdAnalyze(const AnalyzeOptions& o, Manifest& m) {
  if (o.traces.empty() && o.records.empty()) throw UsageError("pass --traces and/or --records");
  if (o.grid < 1) throw UsageError("--grid must be >= 1");
  if (!(o.epsilon >= 0.0)) throw UsageError("--epsilon must be >= 0");
  if (o.window < 1 || o.window % 2 == 0) throw UsageError("--window must be a positive odd number");
  const TaskKind default_kind = *ParseTaskKind(o.task_kind);

  std::vector<std::pair<std::string, std::shared_ptr<const stream::TraceFile>>> traces;
  if (!o.traces.empty()) {
    for (const fs::path& p : ExpandTraces(o.traces)) {
      traces.emplace_back(p.stem().string(),
                          std::make_shared<const stream::TraceFile>(stream::ReadTraceFile(p)));
      m.inputs.push_back(p.string());
    }
  }
  std::vector<GenerationRecord> records;
  for (const std::string& path : o.records) {
    if (!fs::exists(path)) throw UsageError("records not found: " + path);
    auto part = ReadRecordsFile(path);
    records.insert(records.end(), part.begin(), part.end());
    m.inputs.push_back(path);
  }
  std::optional<eval::Dataset> dataset;
  if (!o.dataset.empty()) {
    if (!fs::exists(o.dataset)) throw UsageError("dataset not found: " + o.dataset);
    dataset = eval::LoadDataset(o.dataset, default_kind, fs::path(o.dataset).stem().string());
    m.inputs.push_back(o.dataset);
  }
  m.config = {{"traces", o.traces},   {"records", o.records}, {"dataset", o.dataset},
              {"task_kind", o.task_kind}, {"grid", o.grid}, {"epsilon", o.epsilon},
              {"window", o.window}};

  std::vector<std::pair<std::string, phase_analysis::RankTrajectory>> trajectories;
  for (const auto& [id, trace] : traces) trajectories.emplace_back(id, TraceTrajectory(*trace));
  for (const auto& r : records) {
    if (r.complete) trajectories.emplace_back(r.sample_id + "/" + r.policy_name, r.rank_trajectory);
  }
  if (trajectories.empty()) throw Error(ErrorCode::kEmptyInput, "no complete trajectories to analyze");

  PrepareOutDir(o.out);
  const fs::path dir(o.out);

  std::vector<std::pair<std::string, phase_analysis::PhaseSegmentation>> segs;
  std::string failures = "sample_id,error\n";
  std::vector<phase_analysis::RankTrajectory> all;
  for (const auto& [id, traj] : trajectories) {
    all.push_back(traj);
    try {
      segs.emplace_back(id, phase_analysis::SegmentPhases(traj, o.window));
    } catch (const Error& e) {
      std::string what = e.what();
      std::replace(what.begin(), what.end(), '"', '\'');
      failures += id + ",\"" + what + "\"\n";
    }
  }
  WriteText(dir / "segmentations.csv", phase_analysis::FormatSegmentations(segs), m);
  WriteText(dir / "segmentation_failures.csv", failures, m);

  phase_analysis::MacroCurve curve = phase_analysis::AggregateMacro(all, o.grid);
  if (!traces.empty() && dataset) {
    std::map<std::string, TaskKind> kinds;
    for (const auto& s : dataset->samples) kinds.emplace(s.id, s.task_kind);
    std::map<double, std::vector<GenerationRecord>> per_ratio;
    int64_t skipped = 0;
    for (double ratio : curve.progress_grid) {
      auto& bucket = per_ratio[ratio];
      for (const auto& [id, trace] : traces) {
        if (!trace->header.natural_stop) {
          if (ratio == curve.progress_grid.front()) ++skipped;
          continue;
        }
        RunConfig c;
        c.policy = PolicyKind::kFixedRatio;
        c.baseline.ratio = ratio;
        c.policy_config.watched_token = trace->header.watched_token;
        const auto it = kinds.find(id);
        c.task_kind = it != kinds.end() ? it->second : default_kind;
        stream::TraceStream source(trace);
        controller::LogicalClock clock;
        bucket.push_back(controller::RunGeneration(source, id, c, clock, std::nullopt));
      }
    }
    if (skipped > 0) {
      std::cerr << "warning: " << skipped << " traces lack a natural stop and were left out of "
                << "the accuracy curve\n";
    }
    const auto acc = phase_analysis::TruncationAccuracyCurve(per_ratio, dataset->samples);
    phase_analysis::AttachAccuracy(curve, acc);
    const auto zone = phase_analysis::OptimalTruncationZone(curve, o.epsilon);
    const json z = {{"start", zone.first},        {"end", zone.second},
                    {"flagged", curve.zone_flagged}, {"epsilon", o.epsilon},
                    {"exclusions", acc.exclusions}, {"grid", o.grid}};
    WriteText(dir / "zone.json", z.dump(2) + "\n", m);
    std::cout << "optimal truncation zone: [" << zone.first << ", " << zone.second << "]"
              << (curve.zone_flagged ? " (flagged)" : "") << '\n';
  }
  WriteText(dir / "macro_curve.csv", phase_analysis::FormatMacroCurve(curve), m);
  FinishManifest(dir, m);
  std::cout << segs.size() << " segmentations, " << (trajectories.size() - segs.size())
            << " failures\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// saliency
// ---------------------------------------------------------------------------

struct SaliencyOptions {
  std::string attention;
  std::string gradients;
  std::string boundaries;
  std::string out;
};

int CmdSaliency(const SaliencyOptions& o, Manifest& m) {
  saliency::Boundaries b;
  try {
    b = saliency::Boundaries::Parse(o.boundaries);
  } catch (const Error& e) {
    throw UsageError(std::string("--boundaries: ") + e.what());
  }
  for (const std::string& p : {o.attention, o.gradients}) {
    if (!fs::exists(p)) throw UsageError("tensor file not found: " + p);
  }
  const saliency::TensorBlob a = saliency::LoadTensor(o.attention);
  const saliency::TensorBlob g = saliency::LoadTensor(o.gradients);
  const saliency::SaliencyReport report = saliency::ComputeSaliencyReport(a, g, b);
  m.inputs = {o.attention, o.gradients};
  m.config = {{"boundaries", o.boundaries}, {"alpha", report.alpha}};
  PrepareOutDir(o.out);
  const fs::path dir(o.out);
  WriteText(dir / "saliency.csv", saliency::FormatSaliencyReport(report), m);
  FinishManifest(dir, m);
  std::cout << report.layers << " layers x " << report.heads << " heads written to "
            << (dir / "saliency.csv").string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-synthetic
// ---------------------------------------------------------------------------

struct SyntheticOptions {
  std::string phases = "20,40,200,40";
  uint64_t seed = 0;
  int64_t count = 1;
  std::string out;
  int64_t probe_interval = 16;
  std::string saturation = "0.6";
  std::string gold = "42";
};

int CmdGenSynthetic(const SyntheticOptions& o, Manifest& m) {
  const std::vector<double> lengths = ParseGrid(o.phases, "--phases");
  if (lengths.size() != 4) throw UsageError("--phases needs four lengths");
  const std::vector<double> sat = ParseGrid(o.saturation, "--saturation");
  if (sat.size() > 2) throw UsageError("--saturation takes one value or lo,hi");
  if (o.count < 1) throw UsageError("--count must be >= 1");

  stream::SyntheticPhaseSpec base;
  for (size_t i = 0; i < 4; ++i) {
    if (lengths[i] != static_cast<double>(static_cast<int64_t>(lengths[i]))) {
      throw UsageError("--phases lengths must be integers");
    }
    base.phase_lengths[i] = static_cast<int64_t>(lengths[i]);
  }
  base.probe_interval = o.probe_interval;
  base.gold = o.gold;
  std::vector<stream::SyntheticPhaseSpec> specs;
  for (int64_t i = 0; i < o.count; ++i) {
    stream::SyntheticPhaseSpec spec = base;
    spec.seed = o.seed + static_cast<uint64_t>(i);
    spec.saturation = sat.size() == 1 || o.count == 1
                          ? sat[0]
                          : sat[0] + (sat[1] - sat[0]) * static_cast<double>(i) /
                                         static_cast<double>(o.count - 1);
    try {
      spec.Validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    specs.push_back(spec);
  }
  m.seed = o.seed;
  m.config = {{"phases", o.phases},     {"count", o.count},
              {"probe_interval", o.probe_interval}, {"saturation", o.saturation},
              {"gold", o.gold},         {"seeds_first", o.seed},
              {"seeds_last", o.seed + static_cast<uint64_t>(o.count - 1)}};

  const fs::path dir(o.out);
  PrepareOutDir((dir / "traces").string());
  std::string dataset;
  for (const auto& spec : specs) {
    const stream::TraceFile trace = stream::GenerateSynthetic(spec);
    const std::string problem = stream::CheckSyntheticShape(spec, trace);
    if (!problem.empty()) {
      throw Error(ErrorCode::kIntegrity,
                  "seed " + std::to_string(spec.seed) + " violates its shape: " + problem);
    }
    const std::string id = "syn-" + std::to_string(spec.seed);
    const fs::path path = dir / "traces" / (id + ".jsonl");
    stream::WriteTraceFile(trace, path);
    m.outputs.push_back(path.string());
    dataset += json{{"id", id},
                    {"question", "synthetic trace " + id},
                    {"gold", spec.gold},
                    {"task_kind", "numeric"}}
                   .dump() +
               '\n';
  }
  WriteText(dir / "dataset.jsonl", dataset, m);
  FinishManifest(dir, m);
  std::cout << specs.size() << " traces written to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace
}  // namespace rankstop::cli

int main(int argc, char** argv) {
  using namespace rankstop::cli;
  CLI::App app{"rankstop: rank/entropy-gated reasoning stop controller and benchmark harness"};
  app.set_version_flag("--version", RANKSTOP_VERSION);
  app.require_subcommand(1);

  RunOptions run_opts;
  CLI::App* run = app.add_subcommand("run", "Run one policy over traces or a live endpoint");
  AddRunFlags(run, run_opts);

  RunOptions sweep_opts;
  SweepOptions sweep_grid;
  CLI::App* sweep = app.add_subcommand("sweep", "Run a lambda or fixed-ratio grid");
  AddRunFlags(sweep, sweep_opts);
  sweep->add_option("--lambda-grid", sweep_grid.lambda_grid, "Comma-separated lambda values");
  sweep->add_option("--ratio-grid", sweep_grid.ratio_grid, "Comma-separated fixed ratios");

  AnalyzeOptions analyze_opts;
  CLI::App* analyze = app.add_subcommand("analyze", "Phase segmentation and macro curves");
  analyze->add_option("--traces", analyze_opts.traces, "Trace files or directories");
  analyze->add_option("--records", analyze_opts.records, "Record files");
  analyze->add_option("--dataset", analyze_opts.dataset,
                      "Gold answers; with --traces enables the accuracy curve and zone");
  analyze->add_option("--task-kind", analyze_opts.task_kind, "Default answer kind")
      ->check(CLI::IsMember({"numeric", "multiple_choice", "freeform"}))
      ->capture_default_str();
  analyze->add_option("--grid", analyze_opts.grid, "Progress grid size")->capture_default_str();
  analyze->add_option("--epsilon", analyze_opts.epsilon, "Zone tolerance, accuracy points")
      ->capture_default_str();
  analyze->add_option("--window", analyze_opts.window, "Smoothing window")->capture_default_str();
  analyze->add_option("--out", analyze_opts.out, "Output directory")->required();

  SaliencyOptions sal_opts;
  CLI::App* sal = app.add_subcommand("saliency", "Attention-path saliency from tensor dumps");
  sal->add_option("--attention", sal_opts.attention, "Attention tensor file")->required();
  sal->add_option("--gradients", sal_opts.gradients, "Gradient tensor file")->required();
  sal->add_option("--boundaries", sal_opts.boundaries,
                  "reasoning_start,terminator,answer_start,sequence_end")
      ->required();
  sal->add_option("--out", sal_opts.out, "Output directory")->required();

  SyntheticOptions syn_opts;
  CLI::App* syn = app.add_subcommand("gen-synthetic", "Write seeded four-phase traces");
  syn->add_option("--phases", syn_opts.phases, "Four phase lengths")->capture_default_str();
  syn->add_option("--seed", syn_opts.seed, "First seed")->capture_default_str();
  syn->add_option("--count", syn_opts.count, "Number of traces")->capture_default_str();
  syn->add_option("--out", syn_opts.out, "Output directory")->required();
  syn->add_option("--probe-interval", syn_opts.probe_interval, "Probe branch spacing")
      ->capture_default_str();
  syn->add_option("--saturation", syn_opts.saturation,
                  "Progress where probes turn correct; lo,hi spreads it over the seeds")
      ->capture_default_str();
  syn->add_option("--gold", syn_opts.gold, "Gold answer")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Manifest manifest;
  manifest.argv.assign(argv, argv + argc);
  try {
    if (run->parsed()) {
      manifest.command = "run";
      return CmdRun(run_opts, manifest);
    }
    if (sweep->parsed()) {
      manifest.command = "sweep";
      return CmdSweep(sweep_opts, sweep_grid, manifest);
    }
    if (analyze->parsed()) {
      manifest.command = "analyze";
      return CmdAnalyze(analyze_opts, manifest);
    }
    if (sal->parsed()) {
      manifest.command = "saliency";
      return CmdSaliency(sal_opts, manifest);
    }
    manifest.command = "gen-synthetic";
    return CmdGenSynthetic(syn_opts, manifest);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const rankstop::Error& e) {
    std::cerr << "error (" << rankstop::ErrorCodeName(e.code()) << "): " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
