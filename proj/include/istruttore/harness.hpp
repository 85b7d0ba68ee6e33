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

// Zero-shot evaluation: task prompts, pluggable generation, failure
// detection, scoring and report tables.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "istruttore/chat.hpp"
#include "istruttore/dataset.hpp"
#include "istruttore/error.hpp"
#include "istruttore/judge.hpp"
#include "istruttore/metrics.hpp"
#include "istruttore/prompting.hpp"
#include "json.hpp"

namespace istruttore {

// ---------------------------------------------------------------------------
// Tasks

enum class TaskName { kSquadIt, kNewsSumIt, kXformalF2I, kXformalI2F };

struct TaskSpec {
  TaskName name;
  std::string id;     // CLI spelling, e.g. "squad-it"
  std::string label;  // table heading
  std::string instruction;
  std::vector<Metric> metric_set;
  bool grouped = false;  // NewsSum averages per newspaper first
  DatasetFormat format;
};

inline const std::vector<TaskSpec>& all_tasks() {
  static const std::vector<TaskSpec> tasks{
      {TaskName::kSquadIt, "squad-it", "SQuAD-IT",
       "Dopo aver letto il paragrafo qui sotto, rispondi correttamente alla successiva domanda",
       {Metric::kF1, Metric::kEM, Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS, Metric::kEMGPT},
       false,
       DatasetFormat::kSquadIt},
      {TaskName::kNewsSumIt, "newssum-it", "NewsSum-IT",
       "Dopo aver letto il testo qui sotto, riassumilo adeguatamente.",
       {Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS},
       true,
       DatasetFormat::kNewsSum},
      {TaskName::kXformalF2I, "xformal-f2i", "XFORMAL-IT F->I",
       "Dato il seguente testo scritto in modo formale, riscrivilo in modo informale.",
       {Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS},
       false,
       DatasetFormat::kXformal},
      {TaskName::kXformalI2F, "xformal-i2f", "XFORMAL-IT I->F",
       "Dato il seguente testo scritto in modo informale, riscrivilo in modo formale.",
       {Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS},
       false,
       DatasetFormat::kXformal},
  };
  return tasks;
}

inline const TaskSpec& task_spec(TaskName name) {
  for (const auto& t : all_tasks()) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::kTask, "unknown task");
}

inline const TaskSpec& task_spec(std::string_view id) {
  for (const auto& t : all_tasks()) {
    if (t.id == id) return t;
  }
  throw Error(ErrorKind::kTask, "unknown task '" + std::string(id) +
                                    "' (expected squad-it, newssum-it, xformal-f2i or xformal-i2f)");
}

// One inference prompt plus everything needed to score its answer later.
// The generator only ever sees `prompt`.
struct TaskPrompt {
  std::string id;
  RenderedPrompt prompt;
  std::string source_input;
  std::vector<std::string> references;
  std::string question;
  std::string group;
};

inline TaskPrompt make_task_prompt(const TaskSpec& task, std::string id, std::string input,
                                   std::vector<std::string> references, std::string question = {},
                                   std::string group = {}) {
  InstructionRecord record{task.instruction, input, ""};
  return TaskPrompt{std::move(id), render_prompt(normalize_record(std::move(record)), PromptMode::kInference),
                    std::move(input), std::move(references), std::move(question), std::move(group)};
}

inline std::vector<TaskPrompt> build_task_prompts(const TaskSpec& task, const ParsedDataset& records) {
  std::vector<TaskPrompt> out;
  switch (task.name) {
    case TaskName::kSquadIt: {
      const auto* squad = std::get_if<std::vector<SquadItRecord>>(&records);
      if (!squad) throw Error(ErrorKind::kTask, "squad-it expects SQuAD-IT records");
      for (const auto& r : *squad) {
        out.push_back(make_task_prompt(task, r.id, r.paragraph + "\nDomanda: " + r.question, r.gold_answers,
                                       r.question));
      }
      break;
    }
    case TaskName::kNewsSumIt: {
      const auto* news = std::get_if<std::vector<NewsSumRecord>>(&records);
      if (!news) throw Error(ErrorKind::kTask, "newssum-it expects NewsSum records");
      for (const auto& r : *news) {
        out.push_back(make_task_prompt(task, r.id, r.article, {r.reference_summary}, {}, to_string(r.newspaper)));
      }
      break;
    }
    case TaskName::kXformalF2I:
    case TaskName::kXformalI2F: {
      const auto* xf = std::get_if<std::vector<XformalRecord>>(&records);
      if (!xf) throw Error(ErrorKind::kTask, task.id + " expects XFORMAL records");
      const auto want = task.name == TaskName::kXformalF2I ? StyleDirection::kFormalToInformal
                                                           : StyleDirection::kInformalToFormal;
      for (const auto& r : *xf) {
        if (r.direction != want) {
          throw Error(ErrorKind::kTask, "record " + r.id + " has direction " + to_string(r.direction) +
                                            " but the task is " + task.id);
        }
        out.push_back(make_task_prompt(task, r.id, r.source, r.references));
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

inline constexpr std::string_view kFlagEmptyAnswer = "EmptyAnswer";
inline constexpr std::string_view kFlagVerbatimCopy = "VerbatimCopy";
inline constexpr std::string_view kFlagNoMarker = "NoMarker";
inline constexpr std::string_view kFlagGeneratorError = "GeneratorError";
inline constexpr std::string_view kFlagJudgeError = "JudgeError";

struct GenerationRequest {
  std::string_view id;
  std::size_t index = 0;
  const RenderedPrompt& prompt;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
  // True when the returned text starts with the prompt itself; otherwise it
  // is treated as a continuation of the prompt.
  virtual bool echoes_prompt() const { return false; }
};

// Stored generations keyed by example id, from JSONL {id, output}.
class ReplayGenerator : public Generator {
 public:
  explicit ReplayGenerator(std::unordered_map<std::string, std::string> outputs) : outputs_(std::move(outputs)) {}

  static ReplayGenerator from_jsonl(std::string_view raw) {
    std::unordered_map<std::string, std::string> outputs;
    for (const auto& obj : detail::parse_lines(raw)) {
      const std::size_t index = outputs.size();
      outputs[detail::optional_id(obj, index)] = detail::require_string(obj, "output", index);
    }
    return ReplayGenerator(std::move(outputs));
  }

  std::string generate(const GenerationRequest& request) override {
    auto it = outputs_.find(std::string(request.id));
    if (it == outputs_.end()) throw TransportError("replay file has no output for id " + std::string(request.id), false);
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::string> outputs_;
};

// Sends the rendered prompt as a single user message.
class ChatGenerator : public Generator {
 public:
  ChatGenerator(std::shared_ptr<ChatTransport> transport, std::string model, double temperature = 0.2)
      : transport_(std::move(transport)), model_(std::move(model)), temperature_(temperature) {}

  std::string generate(const GenerationRequest& request) override {
    return transport_->complete(make_user_request(model_, request.prompt.text, temperature_));
  }

 private:
  std::shared_ptr<ChatTransport> transport_;
  std::string model_;
  double temperature_;
};

struct GenerationRecord {
  std::string id;
  std::string task;
  std::string system;
  std::string prompt;
  std::string raw;
  std::optional<std::string> response;
  std::vector<std::string> flags;
  std::string source_input;
  std::vector<std::string> references;
  std::string question;
  std::string group;

  bool has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
  void add_flag(std::string_view f) {
    if (!has_flag(f)) flags.emplace_back(f);
  }
};

// EmptyAnswer: blank response. VerbatimCopy: a response of at least
// `min_copy_chars` code points found verbatim inside the source input.
inline constexpr std::size_t kVerbatimCopyMinChars = 20;

inline std::vector<std::string> detect_failures(const GenerationRecord& record, std::string_view source_input,
                                                std::size_t min_copy_chars = kVerbatimCopyMinChars) {
  std::vector<std::string> flags = record.flags;
  auto add = [&](std::string_view f) {
    if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.emplace_back(f);
  };
  if (record.response) {
    const auto resp = text::trim(*record.response);
    if (resp.empty()) {
      add(kFlagEmptyAnswer);
    } else if (text::decode_utf8(resp).size() >= min_copy_chars &&
               source_input.find(resp) != std::string_view::npos) {
      add(kFlagVerbatimCopy);
    }
  }
  return flags;
}

// One record per prompt, in order; generator failures and missing markers
// become flags and never abort the run.
inline std::vector<GenerationRecord> run_generation(const std::vector<TaskPrompt>& prompts, Generator& generator,
                                                    std::string_view task_id = {}, std::string_view system = {},
                                                    int concurrency = 1) {
  std::vector<GenerationRecord> out(prompts.size());
  auto one = [&](std::size_t i) {
    const auto& p = prompts[i];
    GenerationRecord r;
    r.id = p.id;
    r.task = std::string(task_id);
    r.system = std::string(system);
    r.prompt = p.prompt.text;
    r.source_input = p.source_input;
    r.references = p.references;
    r.question = p.question;
    r.group = p.group;
    try {
      r.raw = generator.generate({p.id, i, p.prompt});
      const std::string full = generator.echoes_prompt() ? r.raw : p.prompt.text + r.raw;
      try {
        r.response = extract_response(full);
      } catch (const Error&) {
        r.add_flag(kFlagNoMarker);
      }
    } catch (const std::exception&) {
      r.add_flag(kFlagGeneratorError);
    }
    r.flags = detect_failures(r, r.source_input);
    out[i] = std::move(r);
  };
  if (concurrency <= 1 || prompts.size() <= 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(concurrency), prompts.size());
    for (std::size_t t = 0; t < n; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < prompts.size(); i = next++) one(i);
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct ScoringOptions {
  const Embedder* embedder = nullptr;  // BERTScore skipped when null
  double bertscore_baseline = 0.0;
  ChatTransport* judge = nullptr;  // EM-GPT skipped when null
  JudgeOptions judge_options;
};

inline std::string join_golds(const std::vector<std::string>& golds) {
  std::string out;
  for (const auto& g : golds) {
    if (!out.empty()) out += " | ";
    out += g;
  }
  return out;
}

inline ScoreReport score_generation(const GenerationRecord& record, const TaskSpec& task,
                                    const ScoringOptions& options) {
  ScoreReport s;
  s.id = record.id;
  s.system = record.system;
  s.task = task.id;
  s.group = task.grouped ? record.group : std::string();
  s.flags = record.flags;
  const std::string prediction = record.response.value_or("");
  const auto wants = [&](Metric m) {
    return std::find(task.metric_set.begin(), task.metric_set.end(), m) != task.metric_set.end();
  };
  if (record.references.empty()) throw Error(ErrorKind::kValidation, "record " + record.id + " has no references");

  const auto pred_tokens = rouge_tokenize(prediction);
  double r1 = 0.0, r2 = 0.0, rl = 0.0;
  for (const auto& ref : record.references) {
    const auto ref_tokens = rouge_tokenize(ref);
    r1 = std::max(r1, rouge_n_tokens(pred_tokens, ref_tokens, 1).f1);
    r2 = std::max(r2, rouge_n_tokens(pred_tokens, ref_tokens, 2).f1);
    rl = std::max(rl, rouge_l_tokens(pred_tokens, ref_tokens).f1);
  }
  if (wants(Metric::kR1)) s[Metric::kR1] = r1;
  if (wants(Metric::kR2)) s[Metric::kR2] = r2;
  if (wants(Metric::kRL)) s[Metric::kRL] = rl;

  if (wants(Metric::kBS) && options.embedder != nullptr) {
    const auto pe = options.embedder->embed(prediction);
    std::optional<double> best;
    for (const auto& ref : record.references) {
      const auto re = options.embedder->embed(ref);
      double v;
      if (pe.vectors.empty() || re.vectors.empty()) {
        v = (0.0 - options.bertscore_baseline) / (1.0 - options.bertscore_baseline);
      } else {
        v = bertscore(pe, re, options.bertscore_baseline).rescaled_f1;
      }
      best = best ? std::max(*best, v) : v;
    }
    s[Metric::kBS] = best;
  }

  if (wants(Metric::kEM) || wants(Metric::kF1)) {
    const auto q = squad_em_f1(prediction, record.references);
    if (wants(Metric::kEM)) s[Metric::kEM] = q.em;
    if (wants(Metric::kF1)) s[Metric::kF1] = q.f1;
  }

  if (wants(Metric::kEMGPT) && options.judge != nullptr) {
    try {
      s[Metric::kEMGPT] =
          em_gpt_judge(record.question, join_golds(record.references), prediction, *options.judge, options.judge_options)
              .verdict;
    } catch (const Error&) {
      s.flags.emplace_back(kFlagJudgeError);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Reports

// Three decimals with the leading zero dropped: 0.25 -> ".250".
inline std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s(buf);
  if (s.rfind("0.", 0) == 0) return s.substr(1);
  if (s.rfind("-0.", 0) == 0) return "-" + s.substr(2);
  return s;
}

inline std::string format_cell(const std::optional<double>& v) { return v ? format_score(*v) : "-"; }

struct ReportTable {
  std::string markdown;
  std::string tsv;
};

// One table per task (in order of first appearance), one row per system,
// the task's metric columns, then the EmptyAnswer and VerbatimCopy rates.
inline ReportTable build_report(const std::vector<ScoreReport>& scores) {
  if (scores.empty()) throw Error(ErrorKind::kPrecondition, "no scores to report");
  std::vector<std::string> task_order;
  std::map<std::string, std::vector<std::string>> system_order;
  std::map<std::pair<std::string, std::string>, std::vector<ScoreReport>> cells;
  for (const auto& s : scores) {
    if (std::find(task_order.begin(), task_order.end(), s.task) == task_order.end()) task_order.push_back(s.task);
    auto& systems = system_order[s.task];
    if (std::find(systems.begin(), systems.end(), s.system) == systems.end()) systems.push_back(s.system);
    cells[{s.task, s.system}].push_back(s);
  }

  ReportTable out;
  std::ostringstream md, tsv;
  tsv << "task\tsystem\tmetric\tvalue\n";
  bool first_task = true;
  for (const auto& task_id : task_order) {
    const auto& task = task_spec(task_id);
    if (!first_task) md << "\n";
    first_task = false;
    md << "### " << task.label << "\n\n| System |";
    for (Metric m : task.metric_set) md << " " << metric_label(m) << " |";
    md << " Empty | Copy |\n|---|";
    for (std::size_t i = 0; i < task.metric_set.size() + 2; ++i) md << "---:|";
    md << "\n";
    for (const auto& system : system_order[task_id]) {
      const auto agg = aggregate(cells[{task_id, system}], task.grouped);
      md << "| " << (system.empty() ? "model" : system) << " |";
      const std::string row = task.id + "\t" + (system.empty() ? "model" : system) + "\t";
      for (Metric m : task.metric_set) {
        md << " " << format_cell(agg[m]) << " |";
        tsv << row << metric_label(m) << "\t" << format_cell(agg[m]) << "\n";
      }
      md << " " << format_score(agg.empty_answer_rate) << " | " << format_score(agg.verbatim_copy_rate) << " |\n";
      tsv << row << "Empty\t" << format_score(agg.empty_answer_rate) << "\n";
      tsv << row << "Copy\t" << format_score(agg.verbatim_copy_rate) << "\n";
    }
  }
  out.markdown = md.str();
  out.tsv = tsv.str();
  return out;
}

// ---------------------------------------------------------------------------
// JSONL I/O

inline nlohmann::ordered_json to_json(const GenerationRecord& r) {
  return {{"id", r.id},
          {"task", r.task},
          {"system", r.system},
          {"prompt", r.prompt},
          {"raw", r.raw},
          {"response", r.response ? nlohmann::ordered_json(*r.response) : nlohmann::ordered_json(nullptr)},
          {"flags", r.flags},
          {"source_input", r.source_input},
          {"references", r.references},
          {"question", r.question},
          {"group", r.group}};
}

inline GenerationRecord generation_from_json(const nlohmann::json& obj, std::size_t index) {
  GenerationRecord r;
  r.id = detail::optional_id(obj, index);
  r.task = obj.value("task", "");
  r.system = obj.value("system", "");
  r.prompt = obj.value("prompt", "");
  r.raw = obj.value("raw", "");
  if (obj.contains("response") && obj["response"].is_string()) r.response = obj["response"].get<std::string>();
  r.flags = obj.value("flags", std::vector<std::string>{});
  r.source_input = obj.value("source_input", "");
  r.references = detail::require_string_list(obj, "references", index);
  r.question = obj.value("question", "");
  r.group = obj.value("group", "");
  return r;
}

inline nlohmann::ordered_json to_json(const ScoreReport& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  for (Metric m : kAllMetrics) {
    j[metric_key(m)] = s[m] ? nlohmann::ordered_json(*s[m]) : nlohmann::ordered_json(nullptr);
  }
  j["flags"] = s.flags;
  j["system"] = s.system;
  j["task"] = s.task;
  j["group"] = s.group;
  return j;
}

inline ScoreReport score_from_json(const nlohmann::json& obj, std::size_t index) {
  ScoreReport s;
  s.id = detail::optional_id(obj, index);
  for (Metric m : kAllMetrics) {
    if (auto it = obj.find(metric_key(m)); it != obj.end() && it->is_number()) s[m] = it->get<double>();
  }
  s.flags = obj.value("flags", std::vector<std::string>{});
  s.system = obj.value("system", "");
  s.task = detail::require_string(obj, "task", index);
  s.group = obj.value("group", "");
  return s;
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) {
    out += to_json(item).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

inline std::vector<GenerationRecord> parse_generations(std::string_view raw) {
  std::vector<GenerationRecord> out;
  const auto lines = detail::parse_lines(raw);
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(generation_from_json(lines[i], i));
  return out;
}

inline std::vector<ScoreReport> parse_scores(std::string_view raw) {
  std::vector<ScoreReport> out;
  const auto lines = detail::parse_lines(raw);
  for (std::size_t i = 0; i < lines.size(); ++i) out.push_back(score_from_json(lines[i], i));
  return out;
}

}  // namespace istruttore
