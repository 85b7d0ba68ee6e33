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

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "istruttore/lora.hpp"
#include "istruttore/matrix.hpp"
#include "istruttore/prompting.hpp"
#include "istruttore/toy_io.hpp"
#include "istruttore/toy_model.hpp"

namespace istruttore {
namespace {

std::vector<std::string> small_corpus(int n) {
  static const std::vector<std::string> words{"sole", "luna", "mare", "vento", "neve", "pane"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    InstructionRecord r{"Ricorda " + std::to_string(i) + ".", std::nullopt, words[i % words.size()]};
    if (i % 3 == 0) r.input = "k" + std::to_string(i);
    out.push_back(render_prompt(r, PromptMode::kTraining).text);
  }
  return out;
}

struct Fixture {
  CharTokenizer tok;
  ToyModel model;
};

Fixture make_fixture(const std::vector<std::string>& corpus, std::size_t d = 16, std::uint64_t seed = 4) {
  Fixture f{CharTokenizer::from_corpus(corpus), {}};
  ToyModelConfig mc;
  mc.vocab_size = f.tok.vocab_size();
  mc.d_model = d;
  mc.d_ff = 2 * d;
  mc.seed = seed;
  f.model = ToyModel::create(mc);
  return f;
}

void randomize_b(ModelAdapters& adapters, std::uint64_t seed, double std_dev = 0.05) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, std_dev);
  for (auto& la : adapters) {
    for (auto* a : {la.query ? &*la.query : nullptr, la.value ? &*la.value : nullptr}) {
      if (a) {
        for (double& v : a->b.data()) v = g(rng);
      }
    }
  }
}

LoraConfig no_dropout() {
  LoraConfig c;
  c.dropout = 0.0;
  return c;
}

TEST(InitAdapter, DeltaIsZeroAndSeeded) {
  const LoraConfig cfg;
  const auto a1 = init_adapter(16, 16, cfg, 9);
  const auto a2 = init_adapter(16, 16, cfg, 9);
  EXPECT_EQ(adapter_delta(a1), Matrix(16, 16));
  EXPECT_EQ(a1.a, a2.a);
  EXPECT_NE(a1.a, init_adapter(16, 16, cfg, 10).a);
  EXPECT_EQ(a1.parameter_count(), 256u);
  EXPECT_EQ(a1.a.rows(), 8u);
  EXPECT_EQ(a1.b.cols(), 8u);
}

TEST(InitAdapter, GaussianStd) {
  LoraConfig cfg;
  cfg.rank = 64;
  const auto a = init_adapter(512, 512, cfg, 1);
  double sum = 0, sq = 0;
  for (double v : a.a.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(a.a.size());
  EXPECT_NEAR(sum / n, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(sq / n), kAdapterInitStd, 5e-4);
}

TEST(InitAdapter, RankTooLarge) {
  LoraConfig cfg;
  cfg.rank = 9;
  try {
    init_adapter(8, 16, cfg, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
  }
}

TEST(AdapterDelta, HandMultiplied) {
  LoraConfig cfg;
  cfg.rank = 1;
  cfg.alpha = 2;
  LoraAdapter a{Matrix{{1, 0}}, Matrix{{1}, {0}}, cfg};
  EXPECT_EQ(adapter_delta(a), (Matrix{{2, 0}, {0, 0}}));

  cfg.rank = 2;
  cfg.alpha = 2;
  LoraAdapter b{Matrix{{1, 2}, {3, 4}}, Matrix{{5, 6}, {7, 8}}, cfg};
  EXPECT_EQ(adapter_delta(b), matmul(b.b, b.a));
}

TEST(MergeWeights, Identities) {
  LoraConfig cfg;
  cfg.rank = 1;
  LoraAdapter zero{Matrix{{0.3, -0.1}}, Matrix{{0}, {0}}, cfg};
  EXPECT_EQ(merge_weights(Matrix::identity(2), zero), Matrix::identity(2));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  LoraConfig c8;
  c8.rank = 4;
  auto a = init_adapter(8, 8, c8, 3);
  for (double& v : a.b.data()) v = g(rng);
  Matrix base(8, 8);
  for (double& v : base.data()) v = g(rng);
  EXPECT_LE(max_abs_diff(merge_weights(base, a) - base, adapter_delta(a)), 1e-12);

  // Merged projection versus base + low-rank path on random inputs.
  Matrix x(5, 8);
  for (double& v : x.data()) v = g(rng);
  const Matrix merged = matmul_transposed(x, merge_weights(base, a));
  const Matrix dual = matmul_transposed(x, base) + matmul_transposed(matmul_transposed(x, a.a), a.b) * c8.scaling();
  EXPECT_LE(max_abs_diff(merged, dual), 1e-9);

  EXPECT_THROW(merge_weights(Matrix(8, 7), a), Error);
}

TEST(Tokenizer, RoundTripAndSpecials) {
  const auto tok = CharTokenizer::from_corpus(std::vector<std::string>{"caffè è"});
  EXPECT_EQ(tok.vocab_size(), 3u + 5u);
  EXPECT_EQ(tok.decode(tok.encode("caffè")), "caffè");
  EXPECT_EQ(tok.encode("z"), std::vector<int>{CharTokenizer::kUnk});
  EXPECT_EQ(tok.decode(std::vector<int>{CharTokenizer::kBos, tok.id_of(U'a'), CharTokenizer::kEos}), "a");
}

TEST(TrainingExample, ScoresOnlyResponseAndEos) {
  const auto prompt = render_prompt({"I", std::nullopt, "ab"}, PromptMode::kTraining).text;
  const auto tok = CharTokenizer::from_corpus(std::vector<std::string>{prompt});
  const auto ex = make_training_example(tok, prompt, 256);
  ASSERT_EQ(ex.tokens.size(), 1 + text::decode_utf8(prompt).size() + 1);
  EXPECT_EQ(ex.scored_count(), 3u);
  EXPECT_EQ(ex.tokens.back(), CharTokenizer::kEos);
  EXPECT_EQ(ex.tokens[ex.tokens.size() - 3], tok.id_of(U'a'));
  EXPECT_EQ(ex.scored[ex.tokens.size() - 3], 1);
  EXPECT_EQ(ex.scored[ex.tokens.size() - 4], 0);  // the newline after the marker

  const auto cut = make_training_example(tok, prompt, 10);
  EXPECT_EQ(cut.tokens.size(), 10u);
  EXPECT_EQ(cut.scored_count(), 0u);
  EXPECT_THROW(make_training_example(tok, "no marker", 256), Error);
}

TEST(ToyModel, InitNeutralityAndMergeEquivalence) {
  const auto corpus = small_corpus(4);
  const auto f = make_fixture(corpus);
  auto adapters = attach_adapters(f.model, LoraConfig{}, 1);
  const auto ex = make_training_example(f.tok, corpus[0], 256);
  EXPECT_EQ(forward_logits(f.model, &adapters, ex.tokens), forward_logits(f.model, nullptr, ex.tokens));

  randomize_b(adapters, 8, 0.3);
  const auto adapted = forward_logits(f.model, &adapters, ex.tokens);
  const auto merged = forward_logits(merge_adapters(f.model, adapters), nullptr, ex.tokens);
  EXPECT_GT(max_abs_diff(adapted, forward_logits(f.model, nullptr, ex.tokens)), 1e-6);
  EXPECT_LE(max_abs_diff(adapted, merged), 1e-9);
}

TEST(ToyModel, TrainableParameterCount) {
  const auto f = make_fixture(small_corpus(2));
  EXPECT_EQ(trainable_parameter_count(attach_adapters(f.model, LoraConfig{}, 0)), 2u * 2u * 256u);
  LoraConfig q_only;
  q_only.targets = {Projection::kQuery};
  EXPECT_EQ(trainable_parameter_count(attach_adapters(f.model, q_only, 0)), 2u * 256u);
}

TEST(ToyModel, GradCheck) {
  const auto corpus = small_corpus(3);
  const auto f = make_fixture(corpus);
  auto adapters = attach_adapters(f.model, no_dropout(), 2);
  randomize_b(adapters, 3);
  for (const auto& p : corpus) {
    const auto r = grad_check(f.model, adapters, make_training_example(f.tok, p, 256));
    EXPECT_LT(r.max_relative_error, 1e-4);
    EXPECT_EQ(r.checked, 2u * 2u * 256u);
  }
}

TEST(ToyModel, ZeroLossSampleHasVanishingGradient) {
  // Token 'a' embeds as 100*e0 and every other token on its own axis, so
  // with near-zero block weights each 'a' predicts 'a' with certainty.
  const CharTokenizer tok(U"a");
  ToyModelConfig mc;
  mc.vocab_size = tok.vocab_size();
  mc.d_model = 8;
  mc.d_ff = 8;
  auto model = ToyModel::create(mc);
  model.embedding = Matrix(mc.vocab_size, mc.d_model);
  model.embedding(tok.id_of(U'a'), 0) = 100.0;
  model.embedding(CharTokenizer::kBos, 1) = 1.0;
  model.embedding(CharTokenizer::kEos, 2) = 1.0;
  model.embedding(CharTokenizer::kUnk, 3) = 1.0;
  model.positional = Matrix(mc.max_len, mc.d_model);
  for (auto& b : model.layers) {
    for (Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) *m *= 1e-6;
  }
  LoraConfig lc = no_dropout();
  lc.rank = 2;
  auto adapters = attach_adapters(model, lc, 5);
  randomize_b(adapters, 6);
  const int a = tok.id_of(U'a');
  TrainingExample ex{{CharTokenizer::kBos, a, a, a, a}, {0, 0, 1, 1, 1}};
  auto grads = AdapterGradients::zeros_like(adapters);
  const auto loss = example_loss(model, adapters, ex, &grads);
  ASSERT_TRUE(loss.has_value());
  EXPECT_LT(*loss, 1e-12);
  double worst = 0.0;
  for (const auto& l : grads.layers) {
    for (const auto* p : {l.query ? &*l.query : nullptr, l.value ? &*l.value : nullptr}) {
      for (double v : p->a.data()) worst = std::max(worst, std::abs(v));
      for (double v : p->b.data()) worst = std::max(worst, std::abs(v));
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(ToyModel, DoublingAlphaWithHalvedBRescalesGradients) {
  const auto corpus = small_corpus(2);
  const auto f = make_fixture(corpus);
  const auto ex = make_training_example(f.tok, corpus[1], 256);
  auto base = attach_adapters(f.model, no_dropout(), 3);
  randomize_b(base, 4);
  auto doubled = base;
  for (auto& la : doubled) {
    for (auto* a : {&*la.query, &*la.value}) {
      a->config.alpha *= 2.0;
      a->b *= 0.5;
    }
  }
  auto g1 = AdapterGradients::zeros_like(base);
  auto g2 = AdapterGradients::zeros_like(doubled);
  const double l1 = *example_loss(f.model, base, ex, &g1);
  const double l2 = *example_loss(f.model, doubled, ex, &g2);
  EXPECT_NEAR(l1, l2, 1e-12);  // same delta, same function
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    for (bool q : {true, false}) {
      const auto& p1 = q ? *g1.layers[l].query : *g1.layers[l].value;
      const auto& p2 = q ? *g2.layers[l].query : *g2.layers[l].value;
      EXPECT_LE(max_abs_diff(p2.b, p1.b * 2.0), 1e-12);
      EXPECT_LE(max_abs_diff(p2.a, p1.a), 1e-12);
    }
  }
  EXPECT_LT(grad_check(f.model, doubled, ex).max_relative_error, 1e-4);
}

TEST(Training, FreezeContract) {
  const auto corpus = small_corpus(8);
  const auto f = make_fixture(corpus);
  const auto snapshot = f.model;
  const auto before = parameter_fingerprint(f.model);
  TrainingConfig tc;
  tc.micro_batch = 2;
  tc.virtual_batch = 4;
  tc.warmup_steps = 2;
  tc.learning_rate = 1e-2;
  tc.epochs = 2;
  const auto r = train(f.model, f.tok, corpus, tc, LoraConfig{});
  EXPECT_EQ(parameter_fingerprint(f.model), before);
  const auto pa = snapshot.parameters(), pb = f.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->data(), pb[i]->data());
  EXPECT_EQ(r.step_losses.size(), 4u);
  EXPECT_EQ(r.epoch_losses.size(), 2u);
}

TEST(Training, ZeroLearningRateLeavesEverythingConstant) {
  const auto corpus = small_corpus(8);
  const auto f = make_fixture(corpus);
  TrainingConfig tc;
  tc.learning_rate = 0.0;
  tc.micro_batch = 4;
  tc.virtual_batch = 8;
  const auto init = attach_adapters(f.model, LoraConfig{}, tc.seed);
  const auto r = train(f.model, f.tok, corpus, tc, LoraConfig{});
  EXPECT_EQ(r.adapters, init);
  for (const auto& s : r.step_losses) EXPECT_NEAR(s.loss, r.step_losses.front().loss, 1e-12);
}

TEST(Training, AccumulationMatchesFullBatchAdamStep) {
  const auto corpus = small_corpus(8);
  const auto f = make_fixture(corpus);
  std::vector<TrainingExample> examples;
  for (const auto& p : corpus) examples.push_back(make_training_example(f.tok, p, 256));
  const LoraConfig lc = no_dropout();
  auto adapters = attach_adapters(f.model, lc, 7);
  randomize_b(adapters, 8);

  TrainingConfig tc;
  tc.micro_batch = 4;
  tc.virtual_batch = 8;
  tc.epochs = 1;
  tc.shuffle = false;
  tc.learning_rate = 1e-2;
  tc.warmup_steps = 4;
  tc.weight_decay = 0.1;
  const auto trained = train_examples(f.model, examples, tc, adapters).adapters;

  std::vector<const TrainingExample*> all;
  for (const auto& e : examples) all.push_back(&e);
  const auto full = batch_gradient(f.model, adapters, all);
  // First AdamW step written out: bias-corrected moments are g and g^2.
  const double lr = tc.learning_rate * 1.0 / 4.0;
  auto expect_step = [&](const Matrix& p0, const Matrix& g, const Matrix& p1) {
    for (std::size_t i = 0; i < p0.size(); ++i) {
      const double gi = g.data()[i];
      const double want = p0.data()[i] - lr * (gi / (std::abs(gi) + tc.epsilon) + tc.weight_decay * p0.data()[i]);
      ASSERT_NEAR(p1.data()[i], want, 1e-9);
    }
  };
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    expect_step(adapters[l].query->a, full.grads.layers[l].query->a, trained[l].query->a);
    expect_step(adapters[l].query->b, full.grads.layers[l].query->b, trained[l].query->b);
    expect_step(adapters[l].value->a, full.grads.layers[l].value->a, trained[l].value->a);
    expect_step(adapters[l].value->b, full.grads.layers[l].value->b, trained[l].value->b);
  }
}

TEST(Training, WarmupSchedule) {
  TrainingConfig tc;
  EXPECT_DOUBLE_EQ(tc.learning_rate_at(1), 3e-6);
  EXPECT_DOUBLE_EQ(tc.learning_rate_at(50), 1.5e-4);
  EXPECT_DOUBLE_EQ(tc.learning_rate_at(100), 3e-4);
  EXPECT_DOUBLE_EQ(tc.learning_rate_at(5000), 3e-4);
}

TEST(Training, ErrorsSurface) {
  const auto corpus = small_corpus(4);
  auto f = make_fixture(corpus);
  TrainingConfig tc;
  EXPECT_THROW(train(f.model, f.tok, std::vector<std::string>{}, tc, LoraConfig{}), Error);
  tc.virtual_batch = 6;
  EXPECT_THROW(train(f.model, f.tok, corpus, tc, LoraConfig{}), Error);
  tc.virtual_batch = 4;
  f.model.embedding(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train(f.model, f.tok, corpus, tc, LoraConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_EQ(e.step(), 1u);
    EXPECT_EQ(exit_code(e.kind()), 3);
  }
}

// The literal defaults give one optimizer step per epoch on 128 examples;
// a shorter schedule with more updates shows the training loop itself
// drives the memorization loss down.
TEST(Training, MemorizesUnderShortSchedule) {
  const auto corpus = small_corpus(32);
  const auto f = make_fixture(corpus, 32, 1);
  TrainingConfig tc;
  tc.micro_batch = 4;
  tc.virtual_batch = 8;
  tc.warmup_steps = 5;
  tc.learning_rate = 2e-2;
  tc.epochs = 12;
  tc.seed = 1;
  const auto r = train(f.model, f.tok, corpus, tc, LoraConfig{});
  EXPECT_LT(r.epoch_losses.back(), 0.5 * r.epoch_losses.front())
      << r.epoch_losses.front() << " -> " << r.epoch_losses.back();
}

TEST(Checkpoint, RoundTripWithBaseModel) {
  const auto corpus = small_corpus(3);
  const auto f = make_fixture(corpus);
  auto adapters = attach_adapters(f.model, LoraConfig{}, 1);
  randomize_b(adapters, 2);
  const AdapterCheckpoint ckpt{LoraConfig{}, adapters, BaseModelSpec{f.model.config, f.tok}};
  const auto json = save_adapter_checkpoint(ckpt);
  const auto parsed = nlohmann::json::parse(json);
  EXPECT_EQ(parsed["config"]["r"], 8);
  EXPECT_EQ(parsed["config"]["alpha"], 16.0);
  EXPECT_EQ(parsed["config"]["targets"], (nlohmann::json{"q", "v"}));
  EXPECT_EQ(parsed["layers"][0]["name"], "layers.0.q");
  EXPECT_EQ(parsed["layers"][0]["A"].size(), 8u);

  const auto back = load_adapter_checkpoint(json);
  EXPECT_EQ(back.config, ckpt.config);
  EXPECT_EQ(back.adapters, adapters);
  ASSERT_TRUE(back.base_model.has_value());
  EXPECT_EQ(back.base_model->tokenizer, f.tok);
  EXPECT_EQ(parameter_fingerprint(ToyModel::create(back.base_model->config)), parameter_fingerprint(f.model));
}

TEST(Checkpoint, LossCsvHeader) {
  const auto csv = loss_history_csv({{1, 1, 2.5}, {1, 2, 2.25}});
  EXPECT_EQ(csv, "epoch,step,loss\n1,1,2.5\n1,2,2.25\n");
}

TEST(ToyGenerator, DeterministicContinuation) {
  const auto corpus = small_corpus(3);
  const auto f = make_fixture(corpus);
  const auto adapters = attach_adapters(f.model, LoraConfig{}, 1);
  DecodingConfig dc;
  dc.max_new_tokens = 12;
  ToyModelGenerator g1(f.model, adapters, f.tok, dc), g2(f.model, adapters, f.tok, dc);
  const auto prompt = render_prompt({"Ricorda 1.", std::nullopt, ""}, PromptMode::kInference);
  const GenerationRequest req{"x", 0, prompt};
  EXPECT_EQ(g1.generate(req), g2.generate(req));
  dc.mode = DecodingMode::kBeam;
  dc.num_beams = 2;
  dc.max_new_tokens = 4;
  ToyModelGenerator beam(f.model, adapters, f.tok, dc);
  EXPECT_LE(text::decode_utf8(beam.generate(req)).size(), 4u);
}

}  // namespace
}  // namespace istruttore
