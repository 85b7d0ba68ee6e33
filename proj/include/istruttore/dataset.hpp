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

// Alpaca-format instruction datasets and the three evaluation-task datasets
// (SQuAD-IT, NewsSum-IT, XFORMAL-IT).

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "istruttore/error.hpp"
#include "istruttore/text.hpp"
#include "json.hpp"

namespace istruttore {

struct InstructionRecord {
  std::string instruction;
  std::optional<std::string> input;
  std::string output;

  bool operator==(const InstructionRecord&) const = default;
};

struct DatasetManifest {
  std::vector<InstructionRecord> records;
  std::string source_name;

  std::size_t record_count() const noexcept { return records.size(); }
  bool operator==(const DatasetManifest&) const = default;
};

struct SquadItRecord {
  std::string id;
  std::string paragraph;
  std::string question;
  std::vector<std::string> gold_answers;

  bool operator==(const SquadItRecord&) const = default;
};

enum class Newspaper { kFanpage, kIlPost };

struct NewsSumRecord {
  std::string id;
  std::string article;
  std::string reference_summary;
  Newspaper newspaper = Newspaper::kFanpage;

  bool operator==(const NewsSumRecord&) const = default;
};

enum class StyleDirection { kFormalToInformal, kInformalToFormal };

struct XformalRecord {
  std::string id;
  std::string source;
  std::vector<std::string> references;
  StyleDirection direction = StyleDirection::kFormalToInformal;

  bool operator==(const XformalRecord&) const = default;
};

enum class DatasetFormat { kAlpacaJson, kSquadIt, kNewsSum, kXformal };

using ParsedDataset = std::variant<DatasetManifest, std::vector<SquadItRecord>,
                                   std::vector<NewsSumRecord>, std::vector<XformalRecord>>;

inline const char* to_string(Newspaper n) {
  return n == Newspaper::kFanpage ? "fanpage" : "ilpost";
}

inline const char* to_string(StyleDirection d) {
  return d == StyleDirection::kFormalToInformal ? "f2i" : "i2f";
}

// ---------------------------------------------------------------------------
// Validation

enum class Violation {
  kEmptyInstruction,
  kEmptyOutput,
  kBlankInput,
};

inline const char* to_string(Violation v) {
  switch (v) {
    case Violation::kEmptyInstruction: return "empty instruction";
    case Violation::kEmptyOutput: return "empty output";
    case Violation::kBlankInput: return "input is present but blank";
  }
  return "unknown violation";
}

struct ValidationResult {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  explicit operator bool() const noexcept { return ok(); }
};

inline ValidationResult validate_record(const InstructionRecord& record) {
  ValidationResult result;
  if (text::is_blank(record.instruction)) result.violations.push_back(Violation::kEmptyInstruction);
  if (record.input && text::is_blank(*record.input)) result.violations.push_back(Violation::kBlankInput);
  if (text::is_blank(record.output)) result.violations.push_back(Violation::kEmptyOutput);
  return result;
}

// Blank input becomes absent. Idempotent.
inline InstructionRecord normalize_record(InstructionRecord record) {
  if (record.input && text::is_blank(*record.input)) record.input.reset();
  return record;
}

inline std::string describe(const ValidationResult& result) {
  std::string out;
  for (auto v : result.violations) {
    if (!out.empty()) out += "; ";
    out += to_string(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline void check_utf8(std::string_view raw) {
  if (auto bad = text::find_invalid_utf8(raw)) {
    throw DecodeError(*bad, "malformed UTF-8");
  }
}

inline nlohmann::json parse_json(std::string_view raw, std::size_t base_offset = 0) {
  try {
    return nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t pos = e.byte > 0 ? e.byte - 1 : 0;
    throw DecodeError(base_offset + pos, "malformed JSON");
  }
}

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t index) {
  if (!obj.is_object()) throw SchemaError(key, index, "expected an object holding key");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(key, index, "missing required key");
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t index) {
  const auto& v = require(obj, key, index);
  if (!v.is_string()) throw SchemaError(key, index, "expected string for key");
  return v.get<std::string>();
}

inline std::vector<std::string> require_string_list(const nlohmann::json& obj, const char* key,
                                                    std::size_t index) {
  const auto& v = require(obj, key, index);
  if (!v.is_array()) throw SchemaError(key, index, "expected array of strings for key");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw SchemaError(key, index, "expected array of strings for key");
    out.push_back(item.get<std::string>());
  }
  if (out.empty()) throw ValidationError(index, std::string("'") + key + "' must not be empty");
  return out;
}

inline std::string optional_id(const nlohmann::json& obj, std::size_t index) {
  auto it = obj.find("id");
  if (it == obj.end() || it->is_null()) return std::to_string(index);
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  throw SchemaError("id", index, "expected string or integer for key");
}

inline nlohmann::json parse_array(std::string_view raw) {
  check_utf8(raw);
  auto doc = parse_json(raw);
  if (!doc.is_array()) throw SchemaError("<root>", 0, "expected top-level array instead of");
  return doc;
}

// One JSON value per non-blank line.
inline std::vector<nlohmann::json> parse_lines(std::string_view raw) {
  check_utf8(raw);
  std::vector<nlohmann::json> out;
  std::size_t start = 0;
  while (start < raw.size()) {
    std::size_t end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    auto line = raw.substr(start, end - start);
    if (!text::is_blank(line)) out.push_back(parse_json(line, start));
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline DatasetManifest parse_alpaca(std::string_view raw, std::string source_name = {}) {
  const auto doc = detail::parse_array(raw);
  DatasetManifest manifest;
  manifest.source_name = std::move(source_name);
  manifest.records.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    InstructionRecord record;
    record.instruction = detail::require_string(obj, "instruction", i);
    record.output = detail::require_string(obj, "output", i);
    // A missing "input" key is treated like "".
    if (obj.is_object() && obj.contains("input")) {
      record.input = detail::require_string(obj, "input", i);
    }
    record = normalize_record(std::move(record));
    if (auto v = validate_record(record); !v) throw ValidationError(i, describe(v));
    manifest.records.push_back(std::move(record));
  }
  return manifest;
}

inline std::vector<SquadItRecord> parse_squad_it(std::string_view raw) {
  const auto doc = detail::parse_array(raw);
  std::vector<SquadItRecord> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    SquadItRecord r;
    r.paragraph = detail::require_string(obj, "paragraph", i);
    r.question = detail::require_string(obj, "question", i);
    r.gold_answers = detail::require_string_list(obj, "answers", i);
    r.id = detail::optional_id(obj, i);
    if (text::is_blank(r.question)) throw ValidationError(i, "empty question");
    out.push_back(std::move(r));
  }
  return out;
}

inline Newspaper parse_newspaper(std::string_view s, std::size_t index) {
  if (s == "fanpage") return Newspaper::kFanpage;
  if (s == "ilpost") return Newspaper::kIlPost;
  throw ValidationError(index, "newspaper must be \"fanpage\" or \"ilpost\", got \"" + std::string(s) + "\"");
}

inline StyleDirection parse_direction(std::string_view s, std::size_t index) {
  if (s == "f2i") return StyleDirection::kFormalToInformal;
  if (s == "i2f") return StyleDirection::kInformalToFormal;
  throw ValidationError(index, "direction must be \"f2i\" or \"i2f\", got \"" + std::string(s) + "\"");
}

inline std::vector<NewsSumRecord> parse_newssum(std::string_view raw) {
  const auto lines = detail::parse_lines(raw);
  std::vector<NewsSumRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& obj = lines[i];
    NewsSumRecord r;
    r.article = detail::require_string(obj, "article", i);
    r.reference_summary = detail::require_string(obj, "reference_summary", i);
    r.newspaper = parse_newspaper(detail::require_string(obj, "newspaper", i), i);
    r.id = detail::optional_id(obj, i);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<XformalRecord> parse_xformal(std::string_view raw) {
  const auto lines = detail::parse_lines(raw);
  std::vector<XformalRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& obj = lines[i];
    XformalRecord r;
    r.source = detail::require_string(obj, "source", i);
    r.references = detail::require_string_list(obj, "references", i);
    r.direction = parse_direction(detail::require_string(obj, "direction", i), i);
    r.id = detail::optional_id(obj, i);
    out.push_back(std::move(r));
  }
  return out;
}

inline ParsedDataset parse_dataset(std::string_view raw, DatasetFormat format) {
  switch (format) {
    case DatasetFormat::kAlpacaJson: return parse_alpaca(raw);
    case DatasetFormat::kSquadIt: return parse_squad_it(raw);
    case DatasetFormat::kNewsSum: return parse_newssum(raw);
    case DatasetFormat::kXformal: return parse_xformal(raw);
  }
  throw Error(ErrorKind::kPrecondition, "unknown dataset format");
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const InstructionRecord& r) {
  return {{"instruction", r.instruction}, {"input", r.input.value_or("")}, {"output", r.output}};
}

// Alpaca layout: four-space indentation, absent input written as "".
inline std::string serialize_dataset(const DatasetManifest& manifest) {
  auto doc = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    if (auto v = validate_record(r); !v) throw ValidationError(i, describe(v));
    doc.push_back(to_json(r));
  }
  return doc.dump(4, ' ', false, nlohmann::json::error_handler_t::strict);
}

}  // namespace istruttore
