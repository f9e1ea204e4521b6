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

#include "rankstop/eval.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "json_util.h"
#include "rankstop/error.h"
#include "rankstop/phase_analysis.h"

namespace rankstop::eval {
namespace {

using nlohmann::json;

bool IsAlpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }
bool IsDigit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool IsSpace(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
char Lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::string CanonicalNumber(std::string num) {
  bool negative = false;
  if (!num.empty() && (num[0] == '-' || num[0] == '+')) {
    negative = num[0] == '-';
    num.erase(0, 1);
  }
  std::string int_part = num;
  std::string frac_part;
  if (const size_t dot = num.find('.'); dot != std::string::npos) {
    int_part = num.substr(0, dot);
    frac_part = num.substr(dot + 1);
  }
  while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
  const size_t nz = int_part.find_first_not_of('0');
  int_part = nz == std::string::npos ? "0" : int_part.substr(nz);
  std::string out = int_part;
  if (!frac_part.empty()) out += "." + frac_part;
  if (negative && out != "0") out = "-" + out;
  return out;
}

std::string ParseNumeric(std::string_view text) {
  static const std::regex kNumber(R"([-+]?(?:\d[\d,]*(?:\.\d+)?|\.\d+))");
  const std::string s(text);
  std::string last;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kNumber); it != std::sregex_iterator();
       ++it) {
    std::string token = it->str();
    const size_t start = static_cast<size_t>(it->position());
    // A sign glued to a preceding word or digit is a hyphen ("3-4", "x-2").
    if ((token[0] == '-' || token[0] == '+') && start > 0) {
      const char prev = s[start - 1];
      if (IsAlpha(prev) || IsDigit(prev) || prev == ')' || prev == '-') token.erase(0, 1);
    }
    while (!token.empty() && token.back() == ',') token.pop_back();
    if (token.find(',') != std::string::npos) {
      // Thousands separators only when every group after the first has three
      // digits; otherwise it is a list and the last element counts.
      const size_t dot = token.find('.');
      const std::string whole = token.substr(0, dot);
      bool thousands = true;
      size_t pos = whole.find(',');
      while (pos != std::string::npos) {
        const size_t next = whole.find(',', pos + 1);
        const size_t len = (next == std::string::npos ? whole.size() : next) - pos - 1;
        if (len != 3) thousands = false;
        pos = next;
      }
      if (thousands) {
        token.erase(std::remove(token.begin(), token.end(), ','), token.end());
      } else {
        token = token.substr(token.rfind(',') + 1);
      }
    }
    if (token.empty() || token == "-" || token == "+") continue;
    last = token;
  }
  return last.empty() ? std::string() : CanonicalNumber(last);
}

std::string ParseMultipleChoice(std::string_view text) {
  const std::string s(text);
  std::string lower;
  lower.reserve(s.size());
  for (char c : s) lower += Lower(c);

  // 1. Letter introduced by an answer keyword.
  std::string keyword_hit;
  size_t hit_pos = 0;
  for (const std::string_view key : {"answer", "option", "choice"}) {
    size_t pos = lower.find(key);
    while (pos != std::string::npos) {
      size_t i = pos + key.size();
      auto skip = [&](auto pred) {
        while (i < s.size() && pred(s[i])) ++i;
      };
      auto skip_ws = [&] { skip([](char c) { return IsSpace(c) || c == '*'; }); };
      skip([](char c) { return IsAlpha(c) && c != ' '; });  // "answers", "options"
      skip_ws();
      if (lower.compare(i, 2, "is") == 0 && (i + 2 >= s.size() || !IsAlpha(s[i + 2]))) {
        i += 2;
        skip_ws();
      }
      bool separator = false;
      if (i < s.size() && (s[i] == ':' || s[i] == '-' || s[i] == '=')) {
        separator = true;
        ++i;
        skip_ws();
      }
      bool paren = false;
      if (i < s.size() && (s[i] == '(' || s[i] == '[')) {
        paren = true;
        ++i;
      }
      if (i < s.size() && IsAlpha(s[i]) && (i + 1 >= s.size() || !IsAlpha(s[i + 1]))) {
        const char c = s[i];
        const bool upper = c >= 'A' && c <= 'Z';
        // A bare lowercase letter is usually an article ("the answer is a ..."),
        // so it only counts when set off by a separator or parentheses.
        if ((upper || paren || separator) && (keyword_hit.empty() || i > hit_pos)) {
          keyword_hit = std::string(1, static_cast<char>(std::toupper(c)));
          hit_pos = i;
        }
      }
      pos = lower.find(key, pos + 1);
    }
  }
  if (!keyword_hit.empty()) return keyword_hit;

  // 2. Last parenthesized letter.
  for (size_t i = s.size(); i >= 3; --i) {
    if (s[i - 3] == '(' && IsAlpha(s[i - 2]) && s[i - 1] == ')') {
      return std::string(1, static_cast<char>(std::toupper(s[i - 2])));
    }
  }

  // 3. Trailing standalone capital.
  size_t end = s.size();
  while (end > 0 && (IsSpace(s[end - 1]) || std::string_view(".)*:]!").find(s[end - 1]) !=
                                                 std::string_view::npos)) {
    --end;
  }
  if (end > 0 && s[end - 1] >= 'A' && s[end - 1] <= 'Z' && (end == 1 || !IsAlpha(s[end - 2]))) {
    return std::string(1, s[end - 1]);
  }
  return {};
}

std::string ParseFreeform(std::string_view text) {
  std::string_view line;
  size_t pos = text.size();
  while (pos > 0) {
    const size_t nl = text.rfind('\n', pos - 1);
    const size_t start = nl == std::string_view::npos ? 0 : nl + 1;
    const std::string_view candidate = text.substr(start, pos - start);
    if (std::any_of(candidate.begin(), candidate.end(), [](char c) { return !IsSpace(c); })) {
      line = candidate;
      break;
    }
    if (nl == std::string_view::npos) break;
    pos = nl;
  }
  std::string out;
  bool pending_space = false;
  for (char c : line) {
    if (IsSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += Lower(c);
  }
  return out;
}

std::string JsonScalarToString(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<int64_t>());
  if (j.is_number()) return internal::FormatReal(j.get<double>());
  throw std::invalid_argument("expected a string or number");
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsvLine(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

constexpr const char* kCsvHeader =
    "dataset,policy,samples,correct,incomplete,top1,mean_tokens,mean_reasoning_tokens,"
    "mean_t_total,mean_t_gen,mean_t_metric,mean_t_eval,objective,efficiency_rate,alpha_cost";

double ParseDouble(const std::string& s) {
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters in number " + s);
  return v;
}

}  // namespace

std::string ParseAnswer(std::string_view text, TaskKind kind) {
  switch (kind) {
    case TaskKind::kNumeric: return ParseNumeric(text);
    case TaskKind::kMultipleChoice: return ParseMultipleChoice(text);
    case TaskKind::kFreeform: return ParseFreeform(text);
  }
  return {};
}

bool IsCorrect(const std::string& normalized_answer, const Sample& sample) {
  if (normalized_answer.empty()) return false;
  return normalized_answer == ParseAnswer(sample.gold, sample.task_kind);
}

Dataset ParseDataset(std::string_view text, TaskKind default_kind,
                     const std::string& default_source) {
  Dataset ds;
  std::set<std::string> ids;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Sample sample;
    try {
      const json j = json::parse(line);
      for (const char* field : {"id", "question", "gold"}) {
        if (!j.contains(field)) throw std::invalid_argument(std::string("missing field '") + field + "'");
      }
      sample.id = JsonScalarToString(j["id"]);
      sample.question = j["question"].get<std::string>();
      sample.gold = JsonScalarToString(j["gold"]);
      sample.task_kind = default_kind;
      if (j.contains("task_kind")) {
        const auto kind = ParseTaskKind(j["task_kind"].get<std::string>());
        if (!kind) throw std::invalid_argument("unknown task_kind");
        sample.task_kind = *kind;
      }
      sample.source = j.contains("source") ? j["source"].get<std::string>() : default_source;
      if (sample.gold.empty()) throw std::invalid_argument("empty gold answer");
      if (sample.task_kind == TaskKind::kMultipleChoice &&
          ParseAnswer(sample.gold, TaskKind::kMultipleChoice).size() != 1) {
        throw std::invalid_argument("multiple-choice gold must be a letter A-Z");
      }
    } catch (const std::exception& e) {
      ds.errors.push_back({line_no, e.what()});
      continue;
    }
    if (!ids.insert(sample.id).second) {
      throw Error(ErrorCode::kLoad, "duplicate sample id '" + sample.id + "' at line " +
                                        std::to_string(line_no));
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

Dataset LoadDataset(const std::string& path, TaskKind default_kind,
                    const std::string& default_source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kLoad, "cannot open dataset " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return ParseDataset(buf.str(), default_kind, default_source);
}

std::vector<std::pair<double, double>> BenchmarkReport::ParetoPoints() const {
  std::vector<std::pair<double, double>> points;
  for (const ReportRow& row : rows) points.emplace_back(row.mean_tokens, row.top1);
  return points;
}

BenchmarkReport Score(std::span<const GenerationRecord> records,
                      std::span<const Sample> samples, double alpha_cost) {
  if (records.empty()) throw Error(ErrorCode::kScoring, "no records to score");
  std::unordered_map<std::string, const Sample*> by_id;
  for (const Sample& s : samples) by_id.emplace(s.id, &s);

  std::vector<std::string> missing;
  for (const GenerationRecord& r : records) {
    if (!by_id.count(r.sample_id)) missing.push_back(r.sample_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    throw Error(ErrorCode::kScoring, "records reference unknown sample ids: " + list);
  }

  struct Acc {
    int64_t samples = 0, correct = 0, incomplete = 0, completed = 0;
    double tokens = 0, reasoning = 0, t_total = 0, t_gen = 0, t_metric = 0, t_eval = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const GenerationRecord& r : records) {
    const Sample& s = *by_id.at(r.sample_id);
    Acc& a = groups[{s.source, r.policy_name}];
    ++a.samples;
    if (!r.complete) {
      ++a.incomplete;
      continue;
    }
    ++a.completed;
    if (IsCorrect(r.normalized_answer, s)) ++a.correct;
    a.tokens += static_cast<double>(r.total_tokens);
    a.reasoning += static_cast<double>(r.reasoning_tokens);
    a.t_total += r.timing.t_total;
    a.t_gen += r.timing.t_gen;
    a.t_metric += r.timing.t_metric;
    a.t_eval += r.timing.t_eval;
  }

  BenchmarkReport report;
  report.alpha_cost = alpha_cost;
  for (const auto& [key, a] : groups) {
    ReportRow row;
    row.dataset = key.first;
    row.policy = key.second;
    row.samples = a.samples;
    row.correct = a.correct;
    row.incomplete = a.incomplete;
    row.top1 = 100.0 * static_cast<double>(a.correct) / static_cast<double>(a.samples);
    if (a.completed > 0) {
      const double n = static_cast<double>(a.completed);
      row.mean_tokens = a.tokens / n;
      row.mean_reasoning_tokens = a.reasoning / n;
      row.mean_t_total = a.t_total / n;
      row.mean_t_gen = a.t_gen / n;
      row.mean_t_metric = a.t_metric / n;
      row.mean_t_eval = a.t_eval / n;
    }
    row.objective = row.top1 - alpha_cost * row.mean_tokens;
    report.rows.push_back(std::move(row));
  }
  for (ReportRow& row : report.rows) {
    const auto base = std::find_if(report.rows.begin(), report.rows.end(), [&](const ReportRow& b) {
      return b.dataset == row.dataset && b.policy == "none";
    });
    if (base == report.rows.end() || base->policy == row.policy) continue;
    if (row.mean_tokens > base->mean_tokens) {
      row.efficiency_rate = phase_analysis::EfficiencyRate(row.top1, row.mean_tokens, base->top1,
                                                           base->mean_tokens);
    }
  }
  return report;
}

std::string FormatReport(const BenchmarkReport& report, ReportFormat format) {
  using internal::FormatReal;
  std::string out;
  if (format == ReportFormat::kTabular) {
    out += kCsvHeader;
    out += '\n';
    for (const ReportRow& r : report.rows) {
      out += CsvField(r.dataset) + ',' + CsvField(r.policy) + ',' + std::to_string(r.samples) +
             ',' + std::to_string(r.correct) + ',' + std::to_string(r.incomplete) + ',' +
             FormatReal(r.top1) + ',' + FormatReal(r.mean_tokens) + ',' +
             FormatReal(r.mean_reasoning_tokens) + ',' + FormatReal(r.mean_t_total) + ',' +
             FormatReal(r.mean_t_gen) + ',' + FormatReal(r.mean_t_metric) + ',' +
             FormatReal(r.mean_t_eval) + ',' + FormatReal(r.objective) + ',' +
             (r.efficiency_rate ? FormatReal(*r.efficiency_rate) : "") + ',' +
             FormatReal(report.alpha_cost) + '\n';
    }
    return out;
  }
  for (const ReportRow& r : report.rows) {
    std::string line = "{";
    internal::AppendKey(line, "dataset", true);
    internal::AppendString(line, r.dataset);
    internal::AppendKey(line, "policy", false);
    internal::AppendString(line, r.policy);
    auto int_field = [&](const char* k, int64_t v) {
      internal::AppendKey(line, k, false);
      line += std::to_string(v);
    };
    auto real_field = [&](const char* k, double v) {
      internal::AppendKey(line, k, false);
      internal::AppendReal(line, v);
    };
    int_field("samples", r.samples);
    int_field("correct", r.correct);
    int_field("incomplete", r.incomplete);
    real_field("top1", r.top1);
    real_field("mean_tokens", r.mean_tokens);
    real_field("mean_reasoning_tokens", r.mean_reasoning_tokens);
    real_field("mean_t_total", r.mean_t_total);
    real_field("mean_t_gen", r.mean_t_gen);
    real_field("mean_t_metric", r.mean_t_metric);
    real_field("mean_t_eval", r.mean_t_eval);
    real_field("objective", r.objective);
    internal::AppendKey(line, "efficiency_rate", false);
    line += r.efficiency_rate ? FormatReal(*r.efficiency_rate) : "null";
    real_field("alpha_cost", report.alpha_cost);
    line += "}\n";
    out += line;
  }
  return out;
}

BenchmarkReport ParseReport(std::string_view text, ReportFormat format) {
  BenchmarkReport report;
  std::istringstream in{std::string(text)};
  std::string line;
  size_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ReportRow r;
      if (format == ReportFormat::kTabular) {
        if (line_no == 1) {
          if (line != kCsvHeader) throw std::invalid_argument("unexpected header");
          continue;
        }
        const auto f = SplitCsvLine(line);
        if (f.size() != 15) throw std::invalid_argument("expected 15 columns");
        r.dataset = f[0];
        r.policy = f[1];
        r.samples = std::stoll(f[2]);
        r.correct = std::stoll(f[3]);
        r.incomplete = std::stoll(f[4]);
        r.top1 = ParseDouble(f[5]);
        r.mean_tokens = ParseDouble(f[6]);
        r.mean_reasoning_tokens = ParseDouble(f[7]);
        r.mean_t_total = ParseDouble(f[8]);
        r.mean_t_gen = ParseDouble(f[9]);
        r.mean_t_metric = ParseDouble(f[10]);
        r.mean_t_eval = ParseDouble(f[11]);
        r.objective = ParseDouble(f[12]);
        if (!f[13].empty()) r.efficiency_rate = ParseDouble(f[13]);
        report.alpha_cost = ParseDouble(f[14]);
      } else {
        const json j = json::parse(line);
        r.dataset = j.at("dataset").get<std::string>();
        r.policy = j.at("policy").get<std::string>();
        r.samples = j.at("samples").get<int64_t>();
        r.correct = j.at("correct").get<int64_t>();
        r.incomplete = j.at("incomplete").get<int64_t>();
        r.top1 = j.at("top1").get<double>();
        r.mean_tokens = j.at("mean_tokens").get<double>();
        r.mean_reasoning_tokens = j.at("mean_reasoning_tokens").get<double>();
        r.mean_t_total = j.at("mean_t_total").get<double>();
        r.mean_t_gen = j.at("mean_t_gen").get<double>();
        r.mean_t_metric = j.at("mean_t_metric").get<double>();
        r.mean_t_eval = j.at("mean_t_eval").get<double>();
        r.objective = j.at("objective").get<double>();
        if (!j.at("efficiency_rate").is_null()) r.efficiency_rate = j["efficiency_rate"].get<double>();
        report.alpha_cost = j.at("alpha_cost").get<double>();
      }
      report.rows.push_back(std::move(r));
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kFormat,
                "malformed report at line " + std::to_string(line_no) + ": " + e.what());
  }
  return report;
}

void EmitReport(const BenchmarkReport& report, ReportFormat format, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kEmit, "cannot open report file " + path);
  out << FormatReport(report, format);
  out.flush();
  if (!out) throw Error(ErrorCode::kEmit, "failed writing report file " + path);
}

}  // namespace rankstop::eval
