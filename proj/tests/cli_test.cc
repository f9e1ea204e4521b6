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

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.h"
#include "oracles.h"
#include "rankstop/record.h"
#include "rankstop/saliency.h"
#include "rankstop/stream.h"
#include "stub_server.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using rankstop::GenerationRecord;
using rankstop::ReadRecordsFile;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "rankstop_cli_XXXXXX").string();
    REQUIRE(mkdtemp(tmpl.data()) != nullptr);
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& name) const { return path_ / name; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string Quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

Outcome Cli(const TempDir& dir, const std::vector<std::string>& args) {
  std::string cmd = Quote(RANKSTOP_CLI_PATH);
  for (const auto& a : args) cmd += " " + Quote(a);
  const fs::path out = dir / ".stdout";
  const fs::path err = dir / ".stderr";
  cmd += " >" + Quote(out.string()) + " 2>" + Quote(err.string());
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = Slurp(out);
  o.err = Slurp(err);
  return o;
}

// Synthetic traces plus matching dataset under dir/syn.
void Generate(const TempDir& dir, int count, uint64_t seed = 100) {
  const Outcome o = Cli(dir, {"gen-synthetic", "--count", std::to_string(count), "--seed",
                              std::to_string(seed), "--probe-interval", "4", "--saturation",
                              "0.3,0.6", "--out", (dir / "syn").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
}

std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[e.path().string()] = Slurp(e.path());
  }
  return files;
}

}  // namespace

TEST_CASE("cli: gen-synthetic writes one deterministic trace per seed") {
  TempDir dir;
  Generate(dir, 5, 7);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir / "syn/traces")) {
    names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"syn-10.jsonl", "syn-11.jsonl", "syn-7.jsonl",
                                          "syn-8.jsonl", "syn-9.jsonl"});
  // Same seed through the library gives the same bytes.
  rankstop::stream::SyntheticPhaseSpec spec;
  spec.seed = 9;
  spec.probe_interval = 4;
  spec.saturation = 0.3 + (0.6 - 0.3) * 2.0 / 4.0;
  CHECK(Slurp(dir / "syn/traces/syn-9.jsonl") ==
        rankstop::stream::SerializeTrace(rankstop::stream::GenerateSynthetic(spec)));
  const json manifest = json::parse(Slurp(dir / "syn/manifest.json"));
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["command"] == "gen-synthetic");
  for (const auto& out : manifest["outputs"]) CHECK(fs::exists(out.get<std::string>()));
}

TEST_CASE("cli: invalid phase spec is a usage error with no output") {
  TempDir dir;
  const Outcome o = Cli(dir, {"gen-synthetic", "--phases", "20,40", "--out", (dir / "x").string()});
  CHECK(o.code == 2);
  CHECK_FALSE(fs::exists(dir / "x"));
}

TEST_CASE("cli: run produces one record per trace and is reproducible") {
  TempDir dir;
  Generate(dir, 10);
  const auto before = Snapshot(dir / "syn");
  const std::vector<std::string> common = {"run", "--traces", (dir / "syn/traces").string(),
                                           "--dataset", (dir / "syn/dataset.jsonl").string(),
                                           "--clock", "logical"};
  auto with_out = [&](const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = common;
    args.push_back("--out");
    args.push_back((dir / out).string());
    args.insert(args.end(), extra.begin(), extra.end());
    return Cli(dir, args);
  };
  Outcome a = with_out("a");
  REQUIRE_MESSAGE(a.code == 0, a.err);
  Outcome b = with_out("b", {"--parallelism", "3"});
  REQUIRE_MESSAGE(b.code == 0, b.err);

  const auto records = ReadRecordsFile((dir / "a/records.jsonl").string());
  CHECK(records.size() == 10);
  CHECK(Slurp(dir / "a/records.jsonl") == Slurp(dir / "b/records.jsonl"));
  CHECK(Slurp(dir / "a/report.csv") == Slurp(dir / "b/report.csv"));
  for (const auto& r : records) {
    CHECK(r.complete);
    CHECK(r.policy_name == "syncthink");
  }
  const json manifest = json::parse(Slurp(dir / "a/manifest.json"));
  CHECK(manifest["config"]["lambda"] == doctest::Approx(0.8));
  CHECK(manifest["inputs"].size() == 11);
  for (const auto& out : manifest["outputs"]) CHECK(fs::exists(out.get<std::string>()));
  CHECK(Snapshot(dir / "syn") == before);
}

TEST_CASE("cli: usage errors exit 2 before creating outputs") {
  TempDir dir;
  Generate(dir, 2);
  const std::string traces = (dir / "syn/traces").string();
  const std::string out = (dir / "out").string();
  const std::vector<std::vector<std::string>> cases = {
      {"run", "--traces", traces, "--out", out, "--lambda", "-1"},
      {"run", "--traces", traces, "--out", out, "--t-max", "0"},
      {"run", "--traces", traces, "--out", out, "--policy", "bogus"},
      {"run", "--traces", (dir / "missing").string(), "--out", out},
      {"run", "--out", out},
      {"run", "--traces", traces, "--out", out, "--watched-token", "5"},
      {"sweep", "--traces", traces, "--out", out, "--lambda-grid", ""},
      {"sweep", "--traces", traces, "--out", out, "--lambda-grid", ","},
      {"sweep", "--traces", traces, "--out", out},
      {"sweep", "--traces", traces, "--out", out, "--lambda-grid", "0.8", "--ratio-grid", "0.5"},
      {"sweep", "--traces", traces, "--out", out, "--ratio-grid", "0.5,1.5"},
      {"analyze", "--out", out},
      {"saliency", "--attention", "a", "--gradients", "g", "--boundaries", "0,1", "--out", out},
      {"no-such-command"},
      {},
  };
  for (const auto& args : cases) {
    CAPTURE(args.size());
    const Outcome o = Cli(dir, args);
    CHECK(o.code == 2);
    CHECK_FALSE(fs::exists(out));
  }
}

TEST_CASE("cli: fixed_ratio without a full-length reference is a usage error") {
  TempDir dir;
  auto trace = rankstop::testing::SyntheticTrace(3);
  trace.steps.resize(100);  // cut before the terminator
  trace.header.step_count = 100;
  trace.header.natural_stop.reset();
  trace.header.final_answer = {};
  trace.probe_branches.clear();
  fs::create_directories(dir / "t");
  rankstop::stream::WriteTraceFile(trace, dir / "t/cut.jsonl");

  const std::string out = (dir / "out").string();
  Outcome o = Cli(dir, {"run", "--traces", (dir / "t").string(), "--out", out, "--policy",
                        "fixed_ratio", "--ratio", "0.5"});
  CHECK(o.code == 2);
  CHECK(o.err.find("reference") != std::string::npos);
  CHECK_FALSE(fs::exists(out));

  // A reference record supplies the length.
  GenerationRecord ref;
  ref.sample_id = "cut";
  ref.reasoning_tokens = 80;
  ref.stop_step = 79;
  ref.final_decision.reason = rankstop::policy::StopReason::kNaturalTermination;
  rankstop::WriteRecordsFile({ref}, (dir / "ref.jsonl").string());
  o = Cli(dir, {"run", "--traces", (dir / "t").string(), "--out", out, "--policy", "fixed_ratio",
                "--ratio", "0.5", "--reference", (dir / "ref.jsonl").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto records = ReadRecordsFile(out + "/records.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].stop_step == 40);
}

TEST_CASE("cli: lambda sweep follows the offline scan and is monotone") {
  TempDir dir;
  Generate(dir, 8);
  const Outcome o = Cli(dir, {"sweep", "--traces", (dir / "syn/traces").string(), "--out",
                              (dir / "s").string(), "--clock", "logical", "--lambda-grid",
                              "0.2,0.8,1.6"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto records = ReadRecordsFile((dir / "s/records.jsonl").string());
  REQUIRE(records.size() == 24);
  const double lambdas[] = {0.2, 0.8, 1.6};
  for (size_t i = 0; i < 8; ++i) {
    const auto trace =
        rankstop::stream::ReadTraceFile(dir / "syn/traces" / (records[i * 3].sample_id + ".jsonl"));
    int64_t previous = -1;
    for (size_t j = 0; j < 3; ++j) {
      const GenerationRecord& r = records[i * 3 + j];
      CHECK(r.config.policy_config.lambda == lambdas[j]);
      const auto expected = rankstop::oracle::OfflineStopStep(
          trace.steps, {lambdas[j], 512, 16, 1, trace.header.watched_token});
      REQUIRE(expected.has_value());
      CHECK(r.stop_step == *expected);
      CHECK(r.stop_step >= previous);
      previous = r.stop_step;
    }
  }
  const std::string table = Slurp(dir / "s/sweep.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
}

TEST_CASE("cli: ratio sweep row 1.0 matches the full-reasoning row") {
  TempDir dir;
  Generate(dir, 6);
  const Outcome o = Cli(dir, {"sweep", "--traces", (dir / "syn/traces").string(), "--dataset",
                              (dir / "syn/dataset.jsonl").string(), "--out", (dir / "s").string(),
                              "--clock", "logical", "--ratio-grid", "0.25,0.5,0.75,1.0"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto records = ReadRecordsFile((dir / "s/records.jsonl").string());
  REQUIRE(records.size() == 30);
  for (size_t i = 0; i < 6; ++i) {
    const GenerationRecord& ratio_one = records[i * 5 + 3];
    const GenerationRecord& full = records[i * 5 + 4];
    CHECK(ratio_one.policy_name == "fixed_ratio@1");
    CHECK(full.policy_name == "full");
    CHECK(rankstop::testing::SameOutcome(ratio_one, full));
  }
  std::istringstream table(Slurp(dir / "s/sweep.csv"));
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(table, line)) rows.push_back(line);
  REQUIRE(rows.size() == 6);
  auto tail = [](const std::string& row) {
    std::string s = row;
    for (int i = 0; i < 3; ++i) s = s.substr(s.find(',') + 1);
    return s;
  };
  CHECK(tail(rows[4]) == tail(rows[5]));
  CHECK(fs::exists(dir / "s/points/ratio_0.5/report.csv"));
}

TEST_CASE("cli: analyze writes segmentations and finds the zone near 0.6") {
  TempDir dir;
  Generate(dir, 20);
  const Outcome o =
      Cli(dir, {"analyze", "--traces", (dir / "syn/traces").string(), "--dataset",
                (dir / "syn/dataset.jsonl").string(), "--grid", "20", "--out", (dir / "a").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const std::string segs = Slurp(dir / "a/segmentations.csv");
  CHECK(std::count(segs.begin(), segs.end(), '\n') == 21);
  const json zone = json::parse(Slurp(dir / "a/zone.json"));
  CHECK(zone["start"].get<double>() == doctest::Approx(0.6));
  CHECK(zone["end"].get<double>() == 1.0);
  CHECK_FALSE(zone["flagged"].get<bool>());
  const std::string curve = Slurp(dir / "a/macro_curve.csv");
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 21);
}

TEST_CASE("cli: analyze flags short trajectories and continues") {
  TempDir dir;
  Generate(dir, 2);
  auto trace = rankstop::testing::SyntheticTrace(1);
  trace.steps.resize(30);
  trace.header.step_count = 30;
  trace.header.natural_stop.reset();
  trace.header.final_answer = {};
  trace.probe_branches.clear();
  rankstop::stream::WriteTraceFile(trace, dir / "syn/traces/short.jsonl");
  const Outcome o = Cli(dir, {"analyze", "--traces", (dir / "syn/traces").string(), "--out",
                              (dir / "a").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const std::string failures = Slurp(dir / "a/segmentation_failures.csv");
  CHECK(failures.find("short,") != std::string::npos);
  const std::string segs = Slurp(dir / "a/segmentations.csv");
  CHECK(std::count(segs.begin(), segs.end(), '\n') == 3);
}

TEST_CASE("cli: saliency report matches the library and surfaces format errors") {
  TempDir dir;
  rankstop::saliency::TensorBlob a{{2, 2, 6, 6}, std::vector<float>(144)};
  rankstop::saliency::TensorBlob g = a;
  for (size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = static_cast<float>((i * 37 % 11) / 11.0);
    g.data[i] = static_cast<float>(((i * 13 % 7) / 7.0) - 0.4);
  }
  rankstop::saliency::WriteTensor(a, dir / "a.stns");
  rankstop::saliency::WriteTensor(g, dir / "g.stns");
  const std::string out = (dir / "s").string();
  Outcome o = Cli(dir, {"saliency", "--attention", (dir / "a.stns").string(), "--gradients",
                        (dir / "g.stns").string(), "--boundaries", "0,3,4,6", "--out", out});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto report = rankstop::saliency::ComputeSaliencyReport(
      a, g, rankstop::saliency::Boundaries::Parse("0,3,4,6"));
  CHECK(Slurp(out + "/saliency.csv") == rankstop::saliency::FormatSaliencyReport(report));

  // Truncated payload: runtime failure naming file and offset.
  std::string bytes = Slurp(dir / "g.stns");
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir / "bad.stns", std::ios::binary) << bytes;
  o = Cli(dir, {"saliency", "--attention", (dir / "a.stns").string(), "--gradients",
                (dir / "bad.stns").string(), "--boundaries", "0,3,4,6", "--out",
                (dir / "s2").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("bad.stns") != std::string::npos);
  CHECK(o.err.find("offset") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "s2"));

  o = Cli(dir, {"saliency", "--attention", (dir / "a.stns").string(), "--gradients",
                (dir / "g.stns").string(), "--boundaries", "3,3,4,6", "--out",
                (dir / "s3").string()});
  CHECK(o.code == 2);
  CHECK_FALSE(fs::exists(dir / "s3"));
}

TEST_CASE("cli: endpoint source against the stub server") {
  TempDir dir;
  rankstop::stream::SyntheticPhaseSpec spec;
  spec.phase_lengths = {20, 30, 60, 20};
  spec.seed = 4;
  rankstop::testing::StubServer server(rankstop::stream::GenerateSynthetic(spec));
  std::ofstream(dir / "ds.jsonl") << R"({"id":"q1","question":"What is 6*7?","gold":"42"})"
                                  << "\n";

  const std::string out = (dir / "live").string();
  Outcome o = Cli(dir, {"run", "--source", "endpoint", "--api-base", server.api_base(),
                        "--dataset", (dir / "ds.jsonl").string(), "--top-logprobs", "64",
                        "--t-max", "128", "--out", out});
  CHECK(o.code == 2);
  CHECK(o.err.find("top_logprobs") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
  CHECK(server.streaming_requests() == 0);

  o = Cli(dir, {"run", "--source", "endpoint", "--api-base", server.api_base(), "--dataset",
                (dir / "ds.jsonl").string(), "--top-logprobs", "129", "--t-max", "128",
                "--policy", "full", "--out", out});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const auto records = ReadRecordsFile(out + "/records.jsonl");
  REQUIRE(records.size() == 1);
  CHECK(records[0].complete);
  CHECK(records[0].stop_step == spec.length() - 1);
  CHECK(fs::exists(out + "/report.csv"));
  CHECK(server.last_requested_top_logprobs() == 129);
}
