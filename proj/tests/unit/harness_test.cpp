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

#include <gtest/gtest.h>

#include <atomic>
#include <string>
#include <vector>

#include "istruttore/dataset.hpp"
#include "istruttore/harness.hpp"
#include "support/test_support.hpp"

namespace istruttore {
namespace {

class ScriptedGenerator : public Generator {
 public:
  ScriptedGenerator(std::vector<std::string> outputs, bool echoes) : outputs_(std::move(outputs)), echoes_(echoes) {}
  std::string generate(const GenerationRequest& r) override {
    const auto& o = outputs_.at(r.index);
    if (o == "<throw>") throw TransportError("boom", false);
    if (o == "<echo>") return r.prompt.text + "Risposta finale";
    return o;
  }
  bool echoes_prompt() const override { return echoes_; }

 private:
  std::vector<std::string> outputs_;
  bool echoes_;
};

std::vector<TaskPrompt> squad_prompts() {
  return build_task_prompts(task_spec("squad-it"), parse_squad_it(testing::read_fixture("squad_it.json")));
}

TEST(TaskPrompts, SquadLayout) {
  const auto prompts = squad_prompts();
  ASSERT_EQ(prompts.size(), 1u);
  const auto& p = prompts[0];
  EXPECT_TRUE(p.prompt.has_input);
  EXPECT_FALSE(p.prompt.includes_output);
  EXPECT_NE(p.prompt.text.find("### Istruzione:\n" + task_spec(TaskName::kSquadIt).instruction), std::string::npos);
  const auto input_end = p.prompt.text.find("\n\n### Risposta:");
  ASSERT_NE(input_end, std::string::npos);
  EXPECT_TRUE(p.prompt.text.substr(0, input_end).ends_with("\nDomanda: " + p.question));
  EXPECT_EQ(p.references, (std::vector<std::string>{"1979"}));
}

TEST(TaskPrompts, ZeroShotPromptsCarryNoGold) {
  for (const auto& p : squad_prompts()) {
    for (const auto& gold : p.references) {
      const auto answer_at = p.prompt.text.rfind("### Risposta:");
      EXPECT_EQ(p.prompt.text.substr(answer_at).find(gold), std::string::npos);
      EXPECT_TRUE(p.prompt.text.ends_with("### Risposta:\n"));
    }
  }
}

TEST(TaskPrompts, StyleTransferDirections) {
  const auto i2f = parse_xformal(testing::read_fixture("xformal_i2f.jsonl"));
  const auto prompts = build_task_prompts(task_spec("xformal-i2f"), i2f);
  ASSERT_EQ(prompts.size(), 1u);
  EXPECT_NE(prompts[0].prompt.text.find(
                "Dato il seguente testo scritto in modo informale, riscrivilo in modo formale."),
            std::string::npos);
  EXPECT_THROW(build_task_prompts(task_spec("xformal-f2i"), i2f), Error);
  EXPECT_THROW(build_task_prompts(task_spec("squad-it"), i2f), Error);
  EXPECT_THROW(task_spec("squad"), Error);
}

TEST(TaskPrompts, NewsSumGroups) {
  const auto prompts = build_task_prompts(task_spec("newssum-it"), parse_newssum(testing::read_fixture("newssum.jsonl")));
  ASSERT_EQ(prompts.size(), 2u);
  EXPECT_NE(prompts[0].group, prompts[1].group);
  EXPECT_FALSE(prompts[0].group.empty());
}

TEST(RunGeneration, Examples) {
  std::vector<TaskPrompt> prompts;
  for (int i = 0; i < 5; ++i) {
    prompts.push_back(make_task_prompt(task_spec("squad-it"), "p" + std::to_string(i), "Testo " + std::to_string(i),
                                       {"x"}, "q"));
  }
  ScriptedGenerator gen({" Roma ", "", "### Risposta: uno\n### Risposta: due", "<throw>", "Parigi"}, false);
  const auto out = run_generation(prompts, gen, "squad-it", "sys");
  ASSERT_EQ(out.size(), 5u);
  EXPECT_EQ(out[0].response, "Roma");
  EXPECT_EQ(out[0].raw, " Roma ");
  EXPECT_TRUE(out[0].flags.empty());
  EXPECT_TRUE(out[1].has_flag(kFlagEmptyAnswer));
  EXPECT_EQ(out[2].response, "due");  // last marker wins
  EXPECT_TRUE(out[3].has_flag(kFlagGeneratorError));
  EXPECT_FALSE(out[3].response.has_value());
  EXPECT_EQ(out[4].system, "sys");
  EXPECT_EQ(out[4].task, "squad-it");

  ScriptedGenerator echo({"<echo>", "no marker here", "<echo>", "<echo>", "<echo>"}, true);
  const auto e = run_generation(prompts, echo);
  EXPECT_EQ(e[0].response, "Risposta finale");
  EXPECT_TRUE(e[1].has_flag(kFlagNoMarker));
  EXPECT_FALSE(e[1].response.has_value());
}

TEST(RunGeneration, ReplayVerbatimAndConcurrentOrder) {
  const auto prompts = squad_prompts();
  auto replay = ReplayGenerator::from_jsonl(testing::read_fixture("replay_camoscio.jsonl"));
  const auto out = run_generation(prompts, replay, "squad-it", "camoscio", 4);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].response, "La seconda crisi petrolifera è stata nel 1979.");

  std::vector<TaskPrompt> many;
  std::vector<std::string> outputs;
  for (int i = 0; i < 64; ++i) {
    many.push_back(make_task_prompt(task_spec("squad-it"), "id" + std::to_string(i), "in", {"x"}));
    outputs.push_back("answer " + std::to_string(i));
  }
  ScriptedGenerator gen(outputs, false);
  const auto res = run_generation(many, gen, "squad-it", "s", 8);
  for (int i = 0; i < 64; ++i) {
    EXPECT_EQ(res[i].id, "id" + std::to_string(i));
    EXPECT_EQ(res[i].response, "answer " + std::to_string(i));
  }

  ReplayGenerator missing({});
  const auto m = run_generation(prompts, missing);
  EXPECT_TRUE(m[0].has_flag(kFlagGeneratorError));
}

TEST(DetectFailures, Examples) {
  const std::string boiler = "Leggi anche: tutte le notizie del giorno sul nostro sito";
  const std::string source = "Articolo completo. " + boiler + " Fine.";
  GenerationRecord r;
  r.response = boiler;
  EXPECT_EQ(detect_failures(r, source), (std::vector<std::string>{"VerbatimCopy"}));
  r.response = "   ";
  EXPECT_EQ(detect_failures(r, source), (std::vector<std::string>{"EmptyAnswer"}));
  r.response = "Fine.";  // too short to count as a copy
  EXPECT_TRUE(detect_failures(r, source).empty());
  r.response = "Una sintesi originale dell'articolo.";
  EXPECT_TRUE(detect_failures(r, source).empty());
  r.response.reset();
  EXPECT_TRUE(detect_failures(r, source).empty());
}

TEST(Scoring, SquadRecord) {
  GenerationRecord r;
  r.id = "squad-0";
  r.system = "camoscio";
  r.response = "La seconda crisi petrolifera è stata nel 1979.";
  r.references = {"1979"};
  r.question = "q";
  const HashingEmbedder emb;
  FunctionTransport judge([](const ChatRequest&) { return std::string("1"); });
  const auto s = score_generation(r, task_spec("squad-it"), {&emb, 0.0, &judge, {}});
  EXPECT_EQ(*s[Metric::kEM], 0.0);
  EXPECT_NEAR(*s[Metric::kF1], 2.0 / 9.0, 1e-12);
  EXPECT_EQ(*s[Metric::kEMGPT], 1.0);
  EXPECT_TRUE(s[Metric::kBS].has_value());
  EXPECT_EQ(s.task, "squad-it");

  FunctionTransport bad([](const ChatRequest&) { return std::string("boh"); });
  const auto e = score_generation(r, task_spec("squad-it"), {nullptr, 0.0, &bad, {}});
  EXPECT_FALSE(e[Metric::kEMGPT].has_value());
  EXPECT_TRUE(e.has_flag(kFlagJudgeError));
  EXPECT_FALSE(e[Metric::kBS].has_value());

  r.response.reset();
  const auto empty = score_generation(r, task_spec("xformal-f2i"), {&emb, 0.5, nullptr, {}});
  EXPECT_EQ(*empty[Metric::kR1], 0.0);
  EXPECT_DOUBLE_EQ(*empty[Metric::kBS], -1.0);
  EXPECT_FALSE(empty[Metric::kEM].has_value());
}

TEST(Report, FormatScore) {
  EXPECT_EQ(format_score(0.25), ".250");
  EXPECT_EQ(format_score(1.0), "1.000");
  EXPECT_EQ(format_score(0.0), ".000");
  EXPECT_EQ(format_score(-0.5), "-.500");
  EXPECT_EQ(format_cell(std::nullopt), "-");
}

TEST(Report, EmptyRateColumn) {
  std::vector<ScoreReport> scores(100);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i].id = std::to_string(i);
    scores[i].task = "xformal-f2i";
    scores[i].system = "camoscio";
    for (Metric m : {Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS}) scores[i][m] = 0.5;
    if (i % 20 == 0) scores[i].flags = {"EmptyAnswer"};
  }
  const auto report = build_report(scores);
  EXPECT_NE(report.markdown.find("| System | R1 | R2 | RL | BS | Empty | Copy |"), std::string::npos);
  EXPECT_NE(report.markdown.find("| camoscio | .500 | .500 | .500 | .500 | .050 | .000 |"), std::string::npos);
  EXPECT_NE(report.tsv.find("xformal-f2i\tcamoscio\tEmpty\t.050\n"), std::string::npos);
  EXPECT_EQ(report.tsv.rfind("task\tsystem\tmetric\tvalue\n", 0), 0u);
  EXPECT_EQ(build_report(scores).markdown, report.markdown);
  EXPECT_THROW(build_report({}), Error);
}

TEST(Jsonl, RoundTrips) {
  GenerationRecord g;
  g.id = "a";
  g.task = "squad-it";
  g.system = "s";
  g.prompt = "p";
  g.raw = "r";
  g.response = "ciao \"è\"";
  g.flags = {"NoMarker"};
  g.source_input = "src";
  g.references = {"x", "y"};
  g.question = "q";
  GenerationRecord bare;
  bare.id = "b";
  bare.references = {"z"};
  const auto back = parse_generations(to_jsonl(std::vector<GenerationRecord>{g, bare}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].response, g.response);
  EXPECT_EQ(back[0].references, g.references);
  EXPECT_EQ(back[0].flags, g.flags);
  EXPECT_FALSE(back[1].response.has_value());

  ScoreReport s;
  s.id = "a";
  s.task = "squad-it";
  s[Metric::kF1] = 2.0 / 9.0;
  s.flags = {"JudgeError"};
  const auto line = to_jsonl(std::vector<ScoreReport>{s});
  EXPECT_NE(line.find("\"em_gpt\":null"), std::string::npos);
  const auto sb = parse_scores(line);
  ASSERT_EQ(sb.size(), 1u);
  EXPECT_EQ(sb[0][Metric::kF1], s[Metric::kF1]);
  EXPECT_FALSE(sb[0][Metric::kR1].has_value());
  EXPECT_EQ(sb[0].flags, s.flags);
}

}  // namespace
}  // namespace istruttore
