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
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "httplib.h"
#include "json.hpp"
#include "rankstop/error.h"
#include "rankstop/policy.h"
#include "rankstop/stream.h"

namespace rankstop::stream {
namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

constexpr int64_t kProbeMaxTokens = 64;

struct ParsedToken {
  std::string text;
  std::vector<std::pair<std::string, double>> top;
  Clock::time_point arrival;
};

struct BaseUrl {
  std::string scheme_host_port;
  std::string prefix;
};

BaseUrl SplitBase(const std::string& api_base) {
  const size_t scheme_end = api_base.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfig, "api base must look like http://host:port/v1, got '" +
                                        api_base + "'");
  }
  const size_t path_start = api_base.find('/', scheme_end + 3);
  BaseUrl url;
  url.scheme_host_port = api_base.substr(0, path_start);
  url.prefix = path_start == std::string::npos ? "" : api_base.substr(path_start);
  while (!url.prefix.empty() && url.prefix.back() == '/') url.prefix.pop_back();
  return url;
}

json MessagesJson(const std::vector<ChatMessage>& messages) {
  json arr = json::array();
  for (const ChatMessage& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

std::string DescribeHttpError(const httplib::Result& res) {
  if (!res) return "request failed: " + httplib::to_string(res.error());
  return "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 512);
}

}  // namespace

void EndpointConfig::ApplyEnvironment() {
  if (api_base.empty()) {
    if (const char* v = std::getenv("SYNCTHINK_API_BASE")) api_base = v;
  }
  if (api_key.empty()) {
    if (const char* v = std::getenv("SYNCTHINK_API_KEY")) api_key = v;
  }
}

SessionFactory ConnectEndpoint(EndpointConfig config, int64_t policy_t_max) {
  config.ApplyEnvironment();
  if (config.top_logprobs < policy_t_max + 1) {
    throw Error(ErrorCode::kCapability,
                "top_logprobs K=" + std::to_string(config.top_logprobs) +
                    " must be at least t_max + 1 = " + std::to_string(policy_t_max + 1) +
                    " so a censored rank can never trigger a stop");
  }
  if (config.api_base.empty()) {
    throw Error(ErrorCode::kConfig, "no endpoint: pass --api-base or set SYNCTHINK_API_BASE");
  }
  if (config.max_new_tokens < 1) throw Error(ErrorCode::kConfig, "max_new_tokens must be >= 1");
  SplitBase(config.api_base);
  return SessionFactory(std::move(config));
}

struct EndpointSession::Impl {
  EndpointConfig config;
  BaseUrl url;
  std::vector<ChatMessage> prompt;

  // Shared with the reader thread.
  std::mutex mu;
  std::condition_variable cv;
  std::deque<ParsedToken> queue;
  bool done = false;
  bool saw_token = false;
  std::string error;
  ErrorCode error_code = ErrorCode::kSession;
  std::atomic<bool> cancel{false};
  std::thread reader;
  std::atomic<int64_t> requests{0};

  // Consumer-side state.
  bool answer_mode = false;
  std::vector<std::string> step_texts;
  std::vector<StepObservation> observed;
  std::map<int64_t, ProbeBranch> probes;
  std::vector<TokenLogprob> last_topk;
  std::unordered_map<std::string, TokenId> ids;
  TokenId next_id = 0;
  Clock::time_point last_arrival;
  std::optional<AnswerSegment> final_answer;

  std::unique_ptr<httplib::Client> MakeClient() const {
    auto client = std::make_unique<httplib::Client>(url.scheme_host_port);
    const auto secs = static_cast<time_t>(config.timeout_seconds);
    client->set_connection_timeout(secs, 0);
    client->set_read_timeout(secs, 0);
    client->set_write_timeout(secs, 0);
    return client;
  }

  httplib::Headers AuthHeaders() const {
    httplib::Headers h;
    if (!config.api_key.empty()) h.emplace("Authorization", "Bearer " + config.api_key);
    return h;
  }

  TokenId Intern(const std::string& text) {
    if (text == config.watched_text) return config.watched_token;
    auto [it, inserted] = ids.emplace(text, next_id);
    if (inserted) {
      ++next_id;
      if (next_id == config.watched_token) ++next_id;
    }
    return it->second;
  }

  void Fail(ErrorCode code, std::string message) {
    std::lock_guard<std::mutex> lock(mu);
    if (error.empty()) {
      error = std::move(message);
      error_code = code;
    }
    done = true;
    cv.notify_all();
  }

  // Returns false to abort the transfer.
  bool HandleEvent(const std::string& payload) {
    if (payload == "[DONE]") {
      std::lock_guard<std::mutex> lock(mu);
      done = true;
      cv.notify_all();
      return true;
    }
    json chunk;
    try {
      chunk = json::parse(payload);
    } catch (const json::exception& e) {
      Fail(ErrorCode::kSession, std::string("unparseable stream chunk: ") + e.what());
      return false;
    }
    if (chunk.contains("error")) {
      Fail(ErrorCode::kSession, "server error: " + chunk["error"].dump());
      return false;
    }
    if (!chunk.contains("choices") || !chunk["choices"].is_array() || chunk["choices"].empty()) {
      return true;  // e.g. trailing usage-only chunk
    }
    const json& choice = chunk["choices"][0];
    const json* logprobs = choice.contains("logprobs") ? &choice["logprobs"] : nullptr;
    const bool has_logprobs = logprobs != nullptr && logprobs->is_object() &&
                              logprobs->contains("content") && (*logprobs)["content"].is_array();
    std::string delta_text;
    if (choice.contains("delta") && choice["delta"].is_object()) {
      for (const char* field : {"content", "reasoning_content"}) {
        if (choice["delta"].contains(field) && choice["delta"][field].is_string()) {
          delta_text += choice["delta"][field].get<std::string>();
        }
      }
    }
    if (!has_logprobs) {
      if (!delta_text.empty()) {
        Fail(ErrorCode::kCapability,
             "endpoint did not return per-token logprobs (missing field "
             "choices[0].logprobs.content[].top_logprobs)");
        return false;
      }
      return true;
    }
    const auto now = Clock::now();
    std::vector<ParsedToken> tokens;
    for (const json& entry : (*logprobs)["content"]) {
      ParsedToken tok;
      tok.arrival = now;
      tok.text = entry.value("token", std::string());
      if (!entry.contains("top_logprobs") || !entry["top_logprobs"].is_array()) {
        Fail(ErrorCode::kCapability,
             "endpoint did not return top-K alternatives (missing field "
             "choices[0].logprobs.content[].top_logprobs)");
        return false;
      }
      for (const json& alt : entry["top_logprobs"]) {
        tok.top.emplace_back(alt.value("token", std::string()),
                             alt.value("logprob", -std::numeric_limits<double>::infinity()));
      }
      tokens.push_back(std::move(tok));
    }
    std::lock_guard<std::mutex> lock(mu);
    for (ParsedToken& tok : tokens) {
      if (!saw_token &&
          static_cast<int64_t>(tok.top.size()) < config.top_logprobs) {
        error = "endpoint returned " + std::to_string(tok.top.size()) +
                " top_logprobs per token, need " + std::to_string(config.top_logprobs);
        error_code = ErrorCode::kCapability;
        done = true;
        cv.notify_all();
        return false;
      }
      saw_token = true;
      queue.push_back(std::move(tok));
    }
    cv.notify_all();
    return true;
  }

  void StartStream(int64_t max_tokens) {
    json body = {
        {"model", config.model},
        {"messages", MessagesJson(prompt)},
        {"stream", true},
        {"logprobs", true},
        {"top_logprobs", config.top_logprobs},
        {"temperature", 0},
        {"max_tokens", max_tokens},
    };
    ++requests;
    reader = std::thread([this, payload = body.dump()] {
      auto client = MakeClient();
      std::string buffer;
      int status = 0;
      std::string error_body;
      httplib::Request req;
      req.method = "POST";
      req.path = url.prefix + "/chat/completions";
      req.headers = AuthHeaders();
      req.headers.emplace("Accept", "text/event-stream");
      req.headers.emplace("Content-Type", "application/json");
      req.body = payload;
      req.response_handler = [&](const httplib::Response& res) {
        status = res.status;
        return true;
      };
      req.content_receiver = [&](const char* data, size_t n, uint64_t, uint64_t) {
        if (cancel.load()) return false;
        if (status >= 400) {
          error_body.append(data, n);
          return true;
        }
        buffer.append(data, n);
        for (;;) {
          size_t sep = buffer.find("\n\n");
          size_t sep_len = 2;
          const size_t crlf = buffer.find("\r\n\r\n");
          if (crlf != std::string::npos && (sep == std::string::npos || crlf < sep)) {
            sep = crlf;
            sep_len = 4;
          }
          if (sep == std::string::npos) break;
          const std::string event = buffer.substr(0, sep);
          buffer.erase(0, sep + sep_len);
          std::string data_payload;
          size_t pos = 0;
          while (pos < event.size()) {
            size_t eol = event.find('\n', pos);
            if (eol == std::string::npos) eol = event.size();
            std::string line = event.substr(pos, eol - pos);
            pos = eol + 1;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.rfind("data:", 0) == 0) {
              std::string d = line.substr(5);
              if (!d.empty() && d.front() == ' ') d.erase(0, 1);
              if (!data_payload.empty()) data_payload += '\n';
              data_payload += d;
            }
          }
          if (!data_payload.empty() && !HandleEvent(data_payload)) return false;
        }
        return true;
      };
      httplib::Response res;
      httplib::Error err = httplib::Error::Success;
      const bool ok = client->send(req, res, err);
      if (cancel.load()) {
        std::lock_guard<std::mutex> lock(mu);
        done = true;
        cv.notify_all();
        return;
      }
      if (status >= 400) {
        Fail(saw_token ? ErrorCode::kSession : ErrorCode::kCapability,
             "endpoint rejected the streaming request: HTTP " + std::to_string(status) + ": " +
                 error_body.substr(0, 512));
        return;
      }
      if (!ok) {
        std::lock_guard<std::mutex> lock(mu);
        if (error.empty() && !done) {
          error = "stream failed: " + httplib::to_string(err);
          error_code = ErrorCode::kSession;
        }
        done = true;
        cv.notify_all();
        return;
      }
      std::lock_guard<std::mutex> lock(mu);
      if (!done && error.empty() && !saw_token) {
        error = "stream ended without any tokens";
      }
      done = true;
      cv.notify_all();
    });
  }

  void StopReader() {
    cancel.store(true);
    if (reader.joinable()) reader.join();
  }

  // Blocks until a token, end of stream or failure.
  std::optional<ParsedToken> Pop() {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return !queue.empty() || done; });
    if (!queue.empty()) {
      ParsedToken tok = std::move(queue.front());
      queue.pop_front();
      return tok;
    }
    if (!error.empty()) throw Error(error_code, error);
    return std::nullopt;
  }

  std::string PrefixText(int64_t steps) const {
    std::string out;
    for (int64_t i = 0; i < steps && i < static_cast<int64_t>(step_texts.size()); ++i) {
      out += step_texts[static_cast<size_t>(i)];
    }
    return out;
  }

  // Non-streaming completion continuing a partial assistant message.
  AnswerSegment Continue(const std::string& assistant_prefix, int64_t max_tokens) {
    std::vector<ChatMessage> messages = prompt;
    messages.push_back({"assistant", assistant_prefix});
    json body = {
        {"model", config.model},
        {"messages", MessagesJson(messages)},
        {"stream", false},
        {"temperature", 0},
        {"max_tokens", std::max<int64_t>(1, max_tokens)},
        {"continue_final_message", true},
        {"add_generation_prompt", false},
    };
    ++requests;
    auto client = MakeClient();
    auto res = client->Post(url.prefix + "/chat/completions", AuthHeaders(), body.dump(),
                            "application/json");
    if (!res || res->status >= 400) {
      throw Error(ErrorCode::kSession, "continuation request failed: " + DescribeHttpError(res));
    }
    try {
      const json reply = json::parse(res->body);
      AnswerSegment seg;
      const json& msg = reply.at("choices").at(0).at("message");
      if (msg.contains("content") && msg["content"].is_string()) {
        seg.text = msg["content"].get<std::string>();
      }
      if (reply.contains("usage") && reply["usage"].contains("completion_tokens")) {
        seg.tokens = reply["usage"]["completion_tokens"].get<int64_t>();
      }
      return seg;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSession, std::string("unparseable completion: ") + e.what());
    }
  }
};

std::unique_ptr<EndpointSession> SessionFactory::Open(std::vector<ChatMessage> prompt) const {
  auto impl = std::make_unique<EndpointSession::Impl>();
  impl->config = config_;
  impl->url = SplitBase(config_.api_base);
  impl->prompt = std::move(prompt);
  impl->last_arrival = Clock::now();
  impl->StartStream(config_.max_new_tokens);
  {
    std::unique_lock<std::mutex> lock(impl->mu);
    impl->cv.wait(lock, [&] { return !impl->queue.empty() || impl->done; });
    if (impl->queue.empty() && !impl->error.empty()) {
      const ErrorCode code = impl->error_code;
      const std::string msg = impl->error;
      lock.unlock();
      impl->StopReader();
      throw Error(code, msg);
    }
  }
  return std::unique_ptr<EndpointSession>(new EndpointSession(std::move(impl)));
}

EndpointSession::EndpointSession(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}

EndpointSession::~EndpointSession() { impl_->StopReader(); }

std::optional<StepObservation> EndpointSession::Next() {
  Impl& s = *impl_;
  if (s.answer_mode) return std::nullopt;
  std::optional<ParsedToken> tok = s.Pop();
  if (!tok) return std::nullopt;

  // Duplicate spellings keep their best logprob; order by descending logprob.
  std::vector<std::pair<std::string, double>> top = tok->top;
  std::stable_sort(top.begin(), top.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<TokenLogprob> received;
  std::vector<TokenLogprob> sorted;
  std::unordered_map<TokenId, bool> seen;
  for (const auto& [text, lp] : tok->top) received.push_back({s.Intern(text), lp});
  for (const auto& [text, lp] : top) {
    const TokenId id = s.Intern(text);
    if (seen.emplace(id, true).second) sorted.push_back({id, lp});
  }

  StepObservation obs;
  obs.t = static_cast<int64_t>(s.observed.size());
  obs.chosen_text = tok->text;
  obs.chosen_token = s.Intern(tok->text);
  const policy::RankResult rank = policy::ComputeRank(std::span<const TokenLogprob>(sorted),
                                                      s.config.watched_token);
  obs.watched_rank = rank.rank;
  obs.censored = rank.censored;
  policy::Distribution dist = policy::Distribution::FromLogprobs(sorted);
  double mass = 0.0;
  for (const auto& e : dist.probs) mass += e.second;
  if (mass > 1.0) {
    for (auto& e : dist.probs) e.second /= mass;
    dist.tail_mass = 0.0;
  }
  obs.entropy = policy::ShannonEntropy(dist);
  obs.step_wall_time =
      std::chrono::duration<double>(tok->arrival - s.last_arrival).count();
  if (obs.step_wall_time < 0) obs.step_wall_time = 0;
  s.last_arrival = tok->arrival;
  obs.topk = std::move(sorted);
  s.last_topk = std::move(received);

  if (tok->text == s.config.watched_text) {
    s.answer_mode = true;
  }
  s.step_texts.push_back(tok->text);
  s.observed.push_back(obs);
  return obs;
}

std::string EndpointSession::ForkForProbe(std::string_view probe_suffix) {
  Impl& s = *impl_;
  if (s.observed.empty()) {
    throw Error(ErrorCode::kUnsupportedProbe, "probe requested before the first step");
  }
  const int64_t step = s.observed.back().t;
  const std::string prefix =
      s.PrefixText(step) + s.config.watched_text + std::string(probe_suffix);
  AnswerSegment seg = s.Continue(prefix, kProbeMaxTokens);
  s.probes[step] = ProbeBranch{std::string(probe_suffix), seg};
  return seg.text;
}

AnswerSegment EndpointSession::Answer(int64_t stop_step, bool injected, int64_t max_tokens) {
  Impl& s = *impl_;
  AnswerSegment seg;
  if (!injected) {
    if (!s.answer_mode) return seg;  // stream ended without a terminator
    while (seg.tokens < max_tokens) {
      std::optional<ParsedToken> tok = s.Pop();
      if (!tok) break;
      seg.text += tok->text;
      ++seg.tokens;
    }
    s.StopReader();
  } else {
    s.StopReader();
    seg = s.Continue(s.PrefixText(stop_step) + s.config.watched_text, max_tokens);
    seg.tokens = std::min(seg.tokens, max_tokens);
  }
  s.final_answer = seg;
  return seg;
}

TokenId EndpointSession::watched_token() const { return impl_->config.watched_token; }

int64_t EndpointSession::vocab_size() const {
  return std::max<int64_t>(impl_->config.vocab_size, impl_->next_id);
}

const std::vector<TokenLogprob>& EndpointSession::last_topk() const { return impl_->last_topk; }

int64_t EndpointSession::requests_issued() const { return impl_->requests.load(); }

TraceFile EndpointSession::Recording() const {
  const Impl& s = *impl_;
  TraceFile trace;
  trace.header.tokenizer = s.config.model.empty() ? "endpoint" : s.config.model;
  trace.header.vocab_size = vocab_size();
  trace.header.watched_token = s.config.watched_token;
  trace.header.source_kind = "endpoint";
  trace.header.step_count = static_cast<int64_t>(s.observed.size());
  if (s.answer_mode) {
    trace.header.natural_stop = static_cast<int64_t>(s.observed.size()) - 1;
    if (s.final_answer) trace.header.final_answer = *s.final_answer;
  }
  trace.steps = s.observed;
  trace.probe_branches = s.probes;
  return trace;
}

}  // namespace rankstop::stream
