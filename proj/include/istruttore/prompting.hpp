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

#include <string>
#include <vector>
#include <string_view>

#include "istruttore/dataset.hpp"
#include "istruttore/error.hpp"
#include "istruttore/text.hpp"

namespace istruttore {

inline constexpr std::string_view kHeaderNoInput =
    "Di seguito è riportata un'istruzione che descrive un task. "
    "Scrivete una risposta che completi adeguatamente la richiesta.\n\n";
inline constexpr std::string_view kHeaderWithInput =
    "Di seguito è riportata un'istruzione che descrive un task, insieme ad un input che "
    "fornisce un contesto più ampio. Scrivete una risposta che completi adeguatamente la "
    "richiesta.\n\n";
inline constexpr std::string_view kInstructionMarker = "### Istruzione:";
inline constexpr std::string_view kInputMarker = "### Input:";
inline constexpr std::string_view kResponseMarker = "### Risposta:";

enum class PromptMode { kTraining, kInference };

struct RenderedPrompt {
  std::string text;
  bool has_input = false;
  bool includes_output = false;

  bool operator==(const RenderedPrompt&) const = default;
};

// Training renders append the output after the response marker; inference
// renders stop right after "### Risposta:\n". The output invariant is only
// enforced for training renders, since evaluation prompts carry no answer.
inline RenderedPrompt render_prompt(const InstructionRecord& record, PromptMode mode) {
  auto v = validate_record(record);
  if (mode == PromptMode::kInference) std::erase(v.violations, Violation::kEmptyOutput);
  if (!v) throw Error(ErrorKind::kValidation, "cannot render prompt: " + describe(v));
  RenderedPrompt p;
  p.has_input = record.input.has_value();
  p.includes_output = mode == PromptMode::kTraining;
  auto& t = p.text;
  t.append(p.has_input ? kHeaderWithInput : kHeaderNoInput);
  t.append(kInstructionMarker).append("\n").append(record.instruction).append("\n\n");
  if (p.has_input) t.append(kInputMarker).append("\n").append(*record.input).append("\n\n");
  t.append(kResponseMarker).append("\n");
  if (p.includes_output) t.append(record.output);
  return p;
}

// Text after the last response marker, trimmed.
inline std::string extract_response(std::string_view generated) {
  const auto pos = generated.rfind(kResponseMarker);
  if (pos == std::string_view::npos) {
    throw Error(ErrorKind::kExtraction, "no \"### Risposta:\" marker in generated text");
  }
  return std::string(text::trim(generated.substr(pos + kResponseMarker.size())));
}

}  // namespace istruttore
