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

// EM-GPT: an external chat model decides whether an answer is correct (1)
// or not (0) given the question and the ground truth.

#include <string>
#include <string_view>

#include "istruttore/chat.hpp"
#include "istruttore/error.hpp"
#include "istruttore/text.hpp"

namespace istruttore {

struct JudgeVerdict {
  int verdict = 0;
  std::string raw_response;
  std::string question;
  std::string gold;
  std::string prediction;
};

struct JudgeOptions {
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.0;
};

inline std::string render_judge_prompt(std::string_view question, std::string_view gold, std::string_view prediction) {
  std::string p;
  p.append("Question: ").append(question).append("\n");
  p.append("Ground-truth answer: ").append(gold).append("\n");
  p.append("Model answer: ").append(prediction).append("\n");
  p.append("Is the model answer correct given the ground truth? Reply with exactly one character: "
           "1 for correct, 0 for incorrect.");
  return p;
}

// First '0' or '1' that is not part of a longer word or number.
inline int parse_judge_verdict(std::string_view raw) {
  const auto cps = text::decode_utf8(raw);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (cps[i] != U'0' && cps[i] != U'1') continue;
    const bool left_ok = i == 0 || !text::is_word_char(cps[i - 1]);
    const bool right_ok = i + 1 == cps.size() || !text::is_word_char(cps[i + 1]);
    if (left_ok && right_ok) return cps[i] == U'1' ? 1 : 0;
  }
  throw JudgeParseError(std::string(raw));
}

inline JudgeVerdict em_gpt_judge(std::string_view question, std::string_view gold, std::string_view prediction,
                                 ChatTransport& transport, const JudgeOptions& options = {}) {
  JudgeVerdict v{0, {}, std::string(question), std::string(gold), std::string(prediction)};
  try {
    v.raw_response =
        transport.complete(make_user_request(options.model, render_judge_prompt(question, gold, prediction),
                                             options.temperature));
  } catch (const TransportError& e) {
    throw Error(ErrorKind::kJudge, e.what());
  }
  v.verdict = parse_judge_verdict(v.raw_response);
  return v;
}

}  // namespace istruttore
