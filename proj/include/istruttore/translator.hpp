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

// Dataset translation through a chat-completion endpoint with a persistent
// content-addressed cache and a resumable, checkpointed job runner.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <openssl/evp.h>

#include "istruttore/chat.hpp"
#include "istruttore/dataset.hpp"
#include "istruttore/error.hpp"
#include "json.hpp"

namespace istruttore {

inline constexpr std::string_view kTranslationPrefix = "Translate the following text to Italian: ";

struct TranslationRequest {
  std::string source_text;
  std::string prompt;
  std::string model_name;
  int attempt = 1;
};

inline TranslationRequest build_translation_request(std::string_view source_text,
                                                    std::string_view model_name) {
  if (source_text.empty()) {
    throw Error(ErrorKind::kPrecondition, "cannot translate an empty text");
  }
  std::string prompt;
  prompt.reserve(kTranslationPrefix.size() + source_text.size());
  prompt.append(kTranslationPrefix).append(source_text);
  return {std::string(source_text), std::move(prompt), std::string(model_name), 1};
}

// Lowercase hex SHA-256.
inline std::string content_hash(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kIo, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

// Thread-safe translation cache. When constructed with a path, existing
// entries are loaded and every insert is appended to the file as one JSONL
// line {hash, source, translation}.
class TranslationCache {
 public:
  TranslationCache() = default;

  explicit TranslationCache(std::filesystem::path backing) : path_(std::move(backing)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (text::is_blank(line)) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        continue;  // torn final line from an interrupted write
      }
      if (!obj.is_object() || !obj.contains("source") || !obj.contains("translation")) continue;
      entries_.emplace(obj.value("hash", content_hash(obj["source"].get<std::string>())),
                       Entry{obj["source"].get<std::string>(), obj["translation"].get<std::string>()});
    }
  }

  std::optional<std::string> lookup(std::string_view source) const {
    const auto key = content_hash(source);
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.source != source) return std::nullopt;
    return it->second.translation;
  }

  // First writer wins; later inserts of the same source are ignored.
  void insert(std::string_view source, std::string_view translation) {
    auto key = content_hash(source);
    std::lock_guard lock(mu_);
    auto [it, inserted] = entries_.emplace(key, Entry{std::string(source), std::string(translation)});
    if (!inserted || path_.empty()) return;
    nlohmann::ordered_json line = {{"hash", key}, {"source", source}, {"translation", translation}};
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    out << line.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::kIo, "cannot append to cache file " + path_.string());
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  struct Entry {
    std::string source;
    std::string translation;
  };

  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
};

struct TranslationOptions {
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
};

// Translates one text, consulting the cache first.
inline std::string translate_text(std::string_view source, ChatTransport& transport,
                                  TranslationCache& cache, const TranslationOptions& options) {
  if (auto hit = cache.lookup(source)) return *hit;
  const auto req = build_translation_request(source, options.model);
  auto translation = transport.complete(make_user_request(req.model_name, req.prompt, options.temperature));
  if (text::is_blank(translation)) {
    throw Error(ErrorKind::kValidation, "endpoint returned an empty translation");
  }
  cache.insert(source, translation);
  return translation;
}

inline InstructionRecord translate_record(const InstructionRecord& record, ChatTransport& transport,
                                          TranslationCache& cache,
                                          const TranslationOptions& options = {},
                                          std::string_view record_id = "?") {
  auto field = [&](std::string_view name, const std::string& value) {
    try {
      return translate_text(value, transport, cache, options);
    } catch (const TransportError& e) {
      throw TranslationError(std::string(name), std::string(record_id), e.what());
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kValidation) {
        throw Error(ErrorKind::kValidation, "field '" + std::string(name) + "' of record " +
                                                std::string(record_id) + ": " + e.what());
      }
      throw;
    }
  };
  InstructionRecord out;
  out.instruction = field("instruction", record.instruction);
  if (record.input) out.input = field("input", *record.input);
  out.output = field("output", record.output);
  return out;
}

// ---------------------------------------------------------------------------
// Job runner

struct Checkpoint {
  std::set<std::size_t> completed_indices;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint cp;
  if (path.empty() || !std::filesystem::exists(path)) return cp;
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    auto doc = nlohmann::json::parse(buf.str());
    for (const auto& idx : doc.at("completed_indices")) cp.completed_indices.insert(idx.get<std::size_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kValidation, "unreadable checkpoint " + path.string() + ": " + e.what());
  }
  return cp;
}

// Written via a temporary file and rename so a crash never leaves a torn
// checkpoint.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  if (path.empty()) return;
  nlohmann::json doc = {{"completed_indices", cp.completed_indices}};
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << doc.dump() << '\n';
    if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct JobOptions {
  TranslationOptions translation;
  std::filesystem::path checkpoint_path;
  std::size_t checkpoint_every = 100;
  int concurrency = 4;
};

// Number of distinct uncached texts a job over `manifest` would request.
inline std::size_t plan_translation_requests(const DatasetManifest& manifest, const TranslationCache& cache) {
  std::unordered_set<std::string> pending;
  auto consider = [&](const std::string& s) {
    if (!cache.lookup(s)) pending.insert(s);
  };
  for (const auto& r : manifest.records) {
    consider(r.instruction);
    if (r.input) consider(*r.input);
    consider(r.output);
  }
  return pending.size();
}

inline DatasetManifest run_translation_job(const DatasetManifest& manifest, ChatTransport& transport,
                                           TranslationCache& cache, const JobOptions& options = {}) {
  const std::size_t n = manifest.records.size();
  Checkpoint checkpoint = load_checkpoint(options.checkpoint_path);
  std::vector<std::optional<InstructionRecord>> results(n);

  // Completed records are rebuilt from the cache; the transport is only
  // consulted if the cache lost an entry.
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < n; ++i) {
    if (checkpoint.completed_indices.count(i) == 0) pending.push_back(i);
  }
  for (std::size_t i : checkpoint.completed_indices) {
    if (i < n) results[i] = translate_record(manifest.records[i], transport, cache, options.translation, std::to_string(i));
  }

  std::mutex mu;
  std::size_t since_save = 0;
  std::optional<std::string> failure;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};

  auto worker = [&] {
    while (!stop.load()) {
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) return;
      const std::size_t i = pending[slot];
      try {
        auto translated = translate_record(manifest.records[i], transport, cache, options.translation,
                                           std::to_string(i));
        std::lock_guard lock(mu);
        results[i] = std::move(translated);
        checkpoint.completed_indices.insert(i);
        if (++since_save >= std::max<std::size_t>(1, options.checkpoint_every)) {
          save_checkpoint(options.checkpoint_path, checkpoint);
          since_save = 0;
        }
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (!failure) failure = e.what();
        stop = true;
      }
    }
  };

  const int threads = static_cast<int>(std::min<std::size_t>(std::max(1, options.concurrency), pending.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  save_checkpoint(options.checkpoint_path, checkpoint);
  if (failure) throw JobError(checkpoint.completed_indices.size(), *failure);

  DatasetManifest out;
  out.source_name = manifest.source_name;
  out.records.reserve(n);
  for (auto& r : results) out.records.push_back(std::move(*r));
  return out;
}

}  // namespace istruttore
