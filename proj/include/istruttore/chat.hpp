// Copyright 2026 The Istruttore Authors
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

#pragma once

// OpenAI-compatible chat-completion transport shared by the translator and
// the EM-GPT judge.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <random>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "istruttore/error.hpp"
#include "json.hpp"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

namespace istruttore {

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;

  bool operator==(const ChatRequest&) const = default;
};

inline ChatRequest make_user_request(std::string model, std::string prompt, double temperature = 0.0) {
  return ChatRequest{std::move(model), {{"user", std::move(prompt)}}, temperature};
}

inline nlohmann::ordered_json to_json(const ChatRequest& req) {
  nlohmann::ordered_json messages = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", req.model}, {"messages", messages}, {"temperature", req.temperature}};
}

// First choice's message content. Malformed bodies are transport failures
// since a retry may succeed.
inline std::string parse_chat_response(const std::string& body) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw TransportError("response body is not JSON");
  }
  try {
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw TransportError("response lacks choices[0].message.content");
  }
}

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  // Returns the assistant message content. Throws TransportError.
  virtual std::string complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// HTTP

struct Endpoint {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
  std::string path;              // e.g. "/v1/chat/completions"
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::kConfiguration, "endpoint URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpChatTransport : public ChatTransport {
 public:
  HttpChatTransport(std::string url, std::string api_key, int max_in_flight = 4,
                    std::chrono::seconds timeout = std::chrono::seconds(60))
      : endpoint_(parse_endpoint(url)),
        api_key_(std::move(api_key)),
        slots_(std::max(1, max_in_flight)),
        timeout_(timeout) {}

  std::string complete(const ChatRequest& request) override {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    httplib::Client client(endpoint_.scheme_host_port);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(endpoint_.path, headers, to_json(request).dump(), "application/json");
    if (!res) {
      throw TransportError("request failed: " + httplib::to_string(res.error()));
    }
    if (res->status == 429 || res->status >= 500) {
      throw TransportError("HTTP " + std::to_string(res->status));
    }
    if (res->status < 200 || res->status >= 300) {
      throw TransportError("HTTP " + std::to_string(res->status), /*retryable=*/false);
    }
    return parse_chat_response(res->body);
  }

 private:
  Endpoint endpoint_;
  std::string api_key_;
  std::counting_semaphore<> slots_;
  std::chrono::seconds timeout_;
};

// ---------------------------------------------------------------------------
// Retry

struct RetryPolicy {
  int max_retries = 5;
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
  std::chrono::milliseconds max_delay{60000};

  // Upper bound of the full-jitter window before attempt `retry` (0-based).
  std::chrono::milliseconds backoff_cap(int retry) const {
    const double cap = static_cast<double>(base_delay.count()) * std::pow(factor, retry);
    return std::chrono::milliseconds(
        static_cast<std::int64_t>(std::min(cap, static_cast<double>(max_delay.count()))));
  }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

// Wraps another transport; each request is attempted at most
// max_retries + 1 times with exponential backoff and full jitter.
class RetryingTransport : public ChatTransport {
 public:
  RetryingTransport(std::shared_ptr<ChatTransport> inner, RetryPolicy policy = {},
                    Sleeper sleeper = real_sleep, std::uint64_t seed = 0)
      : inner_(std::move(inner)), policy_(policy), sleeper_(std::move(sleeper)), rng_(seed) {}

  std::string complete(const ChatRequest& request) override {
    for (int attempt = 0;; ++attempt) {
      try {
        return inner_->complete(request);
      } catch (const TransportError& e) {
        if (!e.retryable() || attempt >= policy_.max_retries) {
          throw TransportError("giving up after " + std::to_string(attempt + 1) +
                                   " attempt(s): " + e.what(),
                               false);
        }
      }
      sleeper_(jittered_delay(attempt));
    }
  }

  const RetryPolicy& policy() const noexcept { return policy_; }

 private:
  std::chrono::milliseconds jittered_delay(int retry) {
    const auto cap = policy_.backoff_cap(retry).count();
    std::lock_guard lock(mu_);
    std::uniform_int_distribution<std::int64_t> dist(0, cap);
    return std::chrono::milliseconds(dist(rng_));
  }

  std::shared_ptr<ChatTransport> inner_;
  RetryPolicy policy_;
  Sleeper sleeper_;
  std::mutex mu_;
  std::mt19937_64 rng_;
};

// Memoizes responses keyed by the serialized request.
class CachingTransport : public ChatTransport {
 public:
  explicit CachingTransport(std::shared_ptr<ChatTransport> inner) : inner_(std::move(inner)) {}

  std::string complete(const ChatRequest& request) override {
    const auto key = to_json(request).dump();
    {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    auto response = inner_->complete(request);
    std::lock_guard lock(mu_);
    return memo_.emplace(key, std::move(response)).first->second;
  }

 private:
  std::shared_ptr<ChatTransport> inner_;
  std::mutex mu_;
  std::unordered_map<std::string, std::string> memo_;
};

// Adapts a callable; handy for scripted transports.
class FunctionTransport : public ChatTransport {
 public:
  explicit FunctionTransport(std::function<std::string(const ChatRequest&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const ChatRequest& request) override { return fn_(request); }

 private:
  std::function<std::string(const ChatRequest&)> fn_;
};

}  // namespace istruttore
