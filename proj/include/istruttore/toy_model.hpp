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

// Desk-scale causal language model used to exercise LoRA finetuning:
// character tokenizer, tied input/output embedding, learned positions, and
// a stack of single-head attention + ReLU MLP blocks without normalization.
// The base weights are frozen; only the Query/Value adapters are trained.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "istruttore/error.hpp"
#include "istruttore/lora.hpp"
#include "istruttore/matrix.hpp"
#include "istruttore/prompting.hpp"
#include "istruttore/text.hpp"

namespace istruttore {

// ---------------------------------------------------------------------------
// Tokenizer

class CharTokenizer {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kFirstChar = 3;

  CharTokenizer() = default;
  explicit CharTokenizer(std::u32string alphabet) : alphabet_(std::move(alphabet)) {
    std::sort(alphabet_.begin(), alphabet_.end());
    alphabet_.erase(std::unique(alphabet_.begin(), alphabet_.end()), alphabet_.end());
  }

  static CharTokenizer from_corpus(std::span<const std::string> texts) {
    std::u32string all;
    for (const auto& t : texts) all += text::decode_utf8(t);
    return CharTokenizer(std::move(all));
  }

  std::size_t vocab_size() const noexcept { return kFirstChar + alphabet_.size(); }
  const std::u32string& alphabet() const noexcept { return alphabet_; }

  int id_of(char32_t c) const {
    auto it = std::lower_bound(alphabet_.begin(), alphabet_.end(), c);
    if (it == alphabet_.end() || *it != c) return kUnk;
    return kFirstChar + static_cast<int>(it - alphabet_.begin());
  }

  std::vector<int> encode(std::string_view s) const {
    std::vector<int> ids;
    for (char32_t c : text::decode_utf8(s)) ids.push_back(id_of(c));
    return ids;
  }

  // Special tokens are dropped.
  std::string decode(std::span<const int> ids) const {
    std::u32string out;
    for (int id : ids) {
      if (id >= kFirstChar && static_cast<std::size_t>(id - kFirstChar) < alphabet_.size()) {
        out.push_back(alphabet_[id - kFirstChar]);
      }
    }
    return text::encode_utf8(out);
  }

  bool operator==(const CharTokenizer&) const = default;

 private:
  std::u32string alphabet_;
};

// Token sequence plus a per-position flag saying whether tokens[t] is a
// scored prediction target (predicted from position t - 1).
struct TrainingExample {
  std::vector<int> tokens;
  std::vector<std::uint8_t> scored;

  std::size_t scored_count() const {
    return static_cast<std::size_t>(std::count(scored.begin(), scored.end(), 1));
  }
};

// BOS + prompt + EOS, truncated to max_length tokens. Only the text after
// the last "### Risposta:" (minus its separator newline) and the EOS are
// scored.
inline TrainingExample make_training_example(const CharTokenizer& tok, std::string_view prompt,
                                             std::size_t max_length) {
  const auto marker = prompt.rfind(kResponseMarker);
  if (marker == std::string_view::npos) {
    throw Error(ErrorKind::kValidation, "training prompt has no \"### Risposta:\" marker");
  }
  std::size_t response_start = marker + kResponseMarker.size();
  if (response_start < prompt.size() && prompt[response_start] == '\n') ++response_start;
  const auto head = tok.encode(prompt.substr(0, response_start));
  const auto tail = tok.encode(prompt.substr(response_start));

  TrainingExample ex;
  ex.tokens.push_back(CharTokenizer::kBos);
  ex.scored.push_back(0);
  for (int id : head) {
    ex.tokens.push_back(id);
    ex.scored.push_back(0);
  }
  for (int id : tail) {
    ex.tokens.push_back(id);
    ex.scored.push_back(1);
  }
  ex.tokens.push_back(CharTokenizer::kEos);
  ex.scored.push_back(1);
  if (ex.tokens.size() > max_length) {
    ex.tokens.resize(max_length);
    ex.scored.resize(max_length);
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Model

struct ToyModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t d_ff = 64;
  std::size_t max_len = 256;
  std::uint64_t seed = 0;

  bool operator==(const ToyModelConfig&) const = default;
};

struct AttentionBlock {
  Matrix wq, wk, wv, wo;  // d x d, applied as x * W^T
  Matrix w1;              // d_ff x d
  Matrix w2;              // d x d_ff
};

struct ToyModel {
  ToyModelConfig config;
  Matrix embedding;   // vocab x d, tied with the output projection
  Matrix positional;  // max_len x d
  std::vector<AttentionBlock> layers;

  static ToyModel create(const ToyModelConfig& cfg) {
    if (cfg.vocab_size == 0 || cfg.d_model == 0 || cfg.n_layers == 0 || cfg.max_len == 0) {
      throw Error(ErrorKind::kConfiguration, "toy model dimensions must be positive");
    }
    std::mt19937_64 rng(cfg.seed);
    auto fill = [&](std::size_t r, std::size_t c, double std_dev) {
      Matrix m(r, c);
      std::normal_distribution<double> g(0.0, std_dev);
      for (double& v : m.data()) v = g(rng);
      return m;
    };
    const double d = static_cast<double>(cfg.d_model);
    ToyModel model;
    model.config = cfg;
    model.embedding = fill(cfg.vocab_size, cfg.d_model, 0.3);
    model.positional = fill(cfg.max_len, cfg.d_model, 0.1);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      AttentionBlock b;
      b.wq = fill(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d));
      b.wk = fill(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d));
      b.wv = fill(cfg.d_model, cfg.d_model, 1.0 / std::sqrt(d));
      b.wo = fill(cfg.d_model, cfg.d_model, 0.5 / std::sqrt(d));
      b.w1 = fill(cfg.d_ff, cfg.d_model, 1.0 / std::sqrt(d));
      b.w2 = fill(cfg.d_model, cfg.d_ff, 0.5 / std::sqrt(static_cast<double>(cfg.d_ff)));
      model.layers.push_back(std::move(b));
    }
    return model;
  }

  // Every base parameter in a fixed order; used for freeze checks.
  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out{&embedding, &positional};
    for (const auto& b : layers) {
      for (const Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.w1, &b.w2}) out.push_back(m);
    }
    return out;
  }
};

// FNV-1a over the raw bytes of every base parameter.
inline std::uint64_t parameter_fingerprint(const ToyModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Matrix* m : model.parameters()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m->data().data());
    for (std::size_t i = 0; i < m->size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

struct LayerAdapters {
  std::optional<LoraAdapter> query;
  std::optional<LoraAdapter> value;

  bool operator==(const LayerAdapters&) const = default;
};

using ModelAdapters = std::vector<LayerAdapters>;

inline ModelAdapters attach_adapters(const ToyModel& model, const LoraConfig& config, std::uint64_t seed) {
  const std::size_t d = model.config.d_model;
  ModelAdapters out(model.layers.size());
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (config.targets_projection(Projection::kQuery)) out[l].query = init_adapter(d, d, config, seed + 2 * l);
    if (config.targets_projection(Projection::kValue)) out[l].value = init_adapter(d, d, config, seed + 2 * l + 1);
  }
  return out;
}

inline std::size_t trainable_parameter_count(const ModelAdapters& adapters) {
  std::size_t n = 0;
  for (const auto& la : adapters) {
    if (la.query) n += la.query->parameter_count();
    if (la.value) n += la.value->parameter_count();
  }
  return n;
}

// Base model with every adapter folded into its projection.
inline ToyModel merge_adapters(const ToyModel& model, const ModelAdapters& adapters) {
  ToyModel merged = model;
  for (std::size_t l = 0; l < adapters.size() && l < merged.layers.size(); ++l) {
    if (adapters[l].query) merged.layers[l].wq = merge_weights(model.layers[l].wq, *adapters[l].query);
    if (adapters[l].value) merged.layers[l].wv = merge_weights(model.layers[l].wv, *adapters[l].value);
  }
  return merged;
}

// Gradients w.r.t. adapter factors, shaped like the adapters themselves.
struct AdapterGradients {
  struct Pair {
    Matrix a;
    Matrix b;
  };
  struct Layer {
    std::optional<Pair> query;
    std::optional<Pair> value;
  };
  std::vector<Layer> layers;

  static AdapterGradients zeros_like(const ModelAdapters& adapters) {
    AdapterGradients g;
    g.layers.resize(adapters.size());
    for (std::size_t l = 0; l < adapters.size(); ++l) {
      if (adapters[l].query) g.layers[l].query = Pair{Matrix(adapters[l].query->a.rows(), adapters[l].query->a.cols()),
                                                      Matrix(adapters[l].query->b.rows(), adapters[l].query->b.cols())};
      if (adapters[l].value) g.layers[l].value = Pair{Matrix(adapters[l].value->a.rows(), adapters[l].value->a.cols()),
                                                      Matrix(adapters[l].value->b.rows(), adapters[l].value->b.cols())};
    }
    return g;
  }

  void add_scaled(const AdapterGradients& o, double s) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (auto [mine, theirs] : {std::pair{&layers[l].query, &o.layers[l].query},
                                  std::pair{&layers[l].value, &o.layers[l].value}}) {
        if (*mine && *theirs) {
          (*mine)->a += (*theirs)->a * s;
          (*mine)->b += (*theirs)->b * s;
        }
      }
    }
  }

  void scale(double s) {
    for (auto& layer : layers) {
      for (auto* p : {&layer.query, &layer.value}) {
        if (*p) {
          (*p)->a *= s;
          (*p)->b *= s;
        }
      }
    }
  }
};

namespace detail {

struct AdapterPath {
  Matrix dropped;    // dropout(x), T x d_in
  Matrix projected;  // dropped * A^T, T x r
  double keep_scale = 1.0;
  std::vector<std::uint8_t> keep;  // empty when dropout is off
};

struct LayerCache {
  Matrix x_in, q, k, v, attn, heads, x_mid, pre_act, x_out;
  std::optional<AdapterPath> q_path, v_path;
};

// x * W^T, plus the adapter path when present.
inline Matrix project(const Matrix& x, const Matrix& w, const std::optional<LoraAdapter>& adapter,
                      std::mt19937_64* dropout_rng, std::optional<AdapterPath>& path) {
  Matrix y = matmul_transposed(x, w);
  if (!adapter) return y;
  AdapterPath p;
  p.dropped = x;
  const double rate = adapter->config.dropout;
  if (dropout_rng != nullptr && rate > 0.0) {
    std::bernoulli_distribution keep(1.0 - rate);
    p.keep.resize(x.size());
    p.keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.size(); ++i) {
      p.keep[i] = keep(*dropout_rng) ? 1 : 0;
      p.dropped.data()[i] = p.keep[i] ? x.data()[i] * p.keep_scale : 0.0;
    }
  }
  p.projected = matmul_transposed(p.dropped, adapter->a);
  y += matmul_transposed(p.projected, adapter->b) * adapter->config.scaling();
  path = std::move(p);
  return y;
}

// Accumulates adapter gradients and returns d(loss)/d(x) through the
// adapter path.
inline Matrix project_backward(const Matrix& dy, const LoraAdapter& adapter, const AdapterPath& path,
                               AdapterGradients::Pair* grads) {
  const double s = adapter.config.scaling();
  if (grads != nullptr) {
    grads->b += transposed_matmul(dy, path.projected) * s;  // d_out x r
  }
  Matrix dp = matmul(dy, adapter.b) * s;  // T x r
  if (grads != nullptr) grads->a += transposed_matmul(dp, path.dropped);  // r x d_in
  Matrix dx = matmul(dp, adapter.a);  // T x d_in
  if (!path.keep.empty()) {
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] = path.keep[i] ? dx.data()[i] * path.keep_scale : 0.0;
  }
  return dx;
}

struct ForwardResult {
  Matrix logits;  // T x vocab
  Matrix final_hidden;
  std::vector<LayerCache> caches;
};

inline ForwardResult forward(const ToyModel& model, const ModelAdapters* adapters, std::span<const int> tokens,
                             std::mt19937_64* dropout_rng) {
  const std::size_t T = tokens.size();
  const std::size_t d = model.config.d_model;
  if (T == 0) throw Error(ErrorKind::kPrecondition, "empty token sequence");
  if (T > model.config.max_len) {
    throw Error(ErrorKind::kPrecondition, "sequence of " + std::to_string(T) + " tokens exceeds max_len " +
                                              std::to_string(model.config.max_len));
  }
  Matrix x(T, d);
  for (std::size_t t = 0; t < T; ++t) {
    const int id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= model.config.vocab_size) {
      throw Error(ErrorKind::kPrecondition, "token id " + std::to_string(id) + " outside vocabulary");
    }
    for (std::size_t j = 0; j < d; ++j) x(t, j) = model.embedding(id, j) + model.positional(t, j);
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  ForwardResult out;
  out.caches.resize(model.layers.size());
  static const std::optional<LoraAdapter> kNone;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& blk = model.layers[l];
    auto& c = out.caches[l];
    const auto& qa = adapters && l < adapters->size() ? (*adapters)[l].query : kNone;
    const auto& va = adapters && l < adapters->size() ? (*adapters)[l].value : kNone;
    c.x_in = x;
    c.q = project(x, blk.wq, qa, dropout_rng, c.q_path);
    c.k = matmul_transposed(x, blk.wk);
    c.v = project(x, blk.wv, va, dropout_rng, c.v_path);

    c.attn = Matrix(T, T);
    for (std::size_t i = 0; i < T; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += c.q(i, p) * c.k(j, p);
        c.attn(i, j) = s * inv_sqrt_d;
        mx = std::max(mx, c.attn(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        c.attn(i, j) = std::exp(c.attn(i, j) - mx);
        z += c.attn(i, j);
      }
      for (std::size_t j = 0; j <= i; ++j) c.attn(i, j) /= z;
    }
    c.heads = matmul(c.attn, c.v);
    c.x_mid = c.x_in + matmul_transposed(c.heads, blk.wo);
    c.pre_act = matmul_transposed(c.x_mid, blk.w1);
    Matrix act = c.pre_act;
    for (double& a : act.data()) a = std::max(0.0, a);
    c.x_out = c.x_mid + matmul_transposed(act, blk.w2);
    x = c.x_out;
  }
  out.final_hidden = x;
  out.logits = matmul_transposed(x, model.embedding);
  return out;
}

}  // namespace detail

inline Matrix forward_logits(const ToyModel& model, const ModelAdapters* adapters, std::span<const int> tokens) {
  return detail::forward(model, adapters, tokens, nullptr).logits;
}

// Mean cross-entropy over the scored targets of one example; fills `grads`
// (accumulating) when non-null. Returns nullopt when nothing is scored.
inline std::optional<double> example_loss(const ToyModel& model, const ModelAdapters& adapters,
                                          const TrainingExample& ex, AdapterGradients* grads,
                                          std::mt19937_64* dropout_rng = nullptr) {
  const std::size_t T = ex.tokens.size();
  std::size_t n = 0;
  for (std::size_t t = 1; t < T; ++t) n += ex.scored[t] ? 1 : 0;
  if (n == 0) return std::nullopt;

  auto fwd = detail::forward(model, &adapters, ex.tokens, dropout_rng);
  const std::size_t V = model.config.vocab_size;
  Matrix dlogits(T, V);
  double loss = 0.0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    if (!ex.scored[t + 1]) continue;
    auto row = fwd.logits.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    const int target = ex.tokens[t + 1];
    loss -= row[target] - log_z;
    if (grads != nullptr) {
      for (std::size_t j = 0; j < V; ++j) dlogits(t, j) = std::exp(row[j] - log_z) / static_cast<double>(n);
      dlogits(t, target) -= 1.0 / static_cast<double>(n);
    }
  }
  loss /= static_cast<double>(n);
  if (grads == nullptr) return loss;

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.config.d_model));
  Matrix dx = matmul(dlogits, model.embedding);  // T x d
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& blk = model.layers[li];
    const auto& c = fwd.caches[li];
    auto& g = grads->layers[li];

    // MLP residual.
    Matrix d_mid = dx;
    Matrix d_act = matmul(dx, blk.w2);  // T x d_ff
    for (std::size_t i = 0; i < d_act.size(); ++i) {
      if (c.pre_act.data()[i] <= 0.0) d_act.data()[i] = 0.0;
    }
    d_mid += matmul(d_act, blk.w1);

    // Attention residual.
    Matrix d_in = d_mid;
    Matrix d_heads = matmul(d_mid, blk.wo);           // T x d
    Matrix d_attn = matmul_transposed(d_heads, c.v);  // T x T
    Matrix d_v = transposed_matmul(c.attn, d_heads);  // T x d
    Matrix d_scores(T, T);
    for (std::size_t i = 0; i < T; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) dot += c.attn(i, j) * d_attn(i, j);
      for (std::size_t j = 0; j <= i; ++j) d_scores(i, j) = c.attn(i, j) * (d_attn(i, j) - dot) * inv_sqrt_d;
    }
    Matrix d_q = matmul(d_scores, c.k);
    Matrix d_k = transposed_matmul(d_scores, c.q);

    d_in += matmul(d_k, blk.wk);
    d_in += matmul(d_q, blk.wq);
    d_in += matmul(d_v, blk.wv);
    if (adapters[li].query) {
      d_in += detail::project_backward(d_q, *adapters[li].query, *c.q_path, g.query ? &*g.query : nullptr);
    }
    if (adapters[li].value) {
      d_in += detail::project_backward(d_v, *adapters[li].value, *c.v_path, g.value ? &*g.value : nullptr);
    }
    dx = std::move(d_in);
  }
  return loss;
}

// Mean loss and mean gradient over a batch in a single pass. Examples with
// nothing scored are skipped; `count` reports how many contributed.
struct BatchGradient {
  double loss = 0.0;
  std::size_t count = 0;
  AdapterGradients grads;
};

inline BatchGradient batch_gradient(const ToyModel& model, const ModelAdapters& adapters,
                                    std::span<const TrainingExample* const> batch,
                                    std::mt19937_64* dropout_rng = nullptr) {
  BatchGradient out{0.0, 0, AdapterGradients::zeros_like(adapters)};
  for (const TrainingExample* ex : batch) {
    if (auto l = example_loss(model, adapters, *ex, &out.grads, dropout_rng)) {
      out.loss += *l;
      ++out.count;
    }
  }
  if (out.count > 0) {
    out.loss /= static_cast<double>(out.count);
    out.grads.scale(1.0 / static_cast<double>(out.count));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  double learning_rate = 3e-4;
  std::size_t epochs = 3;
  std::size_t micro_batch = 4;
  std::size_t virtual_batch = 128;
  std::size_t warmup_steps = 100;
  std::size_t max_length = 256;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw Error(ErrorKind::kConfiguration, "learning rate must be non-negative");
    if (epochs == 0) throw Error(ErrorKind::kConfiguration, "epochs must be positive");
    if (micro_batch == 0 || virtual_batch == 0) throw Error(ErrorKind::kConfiguration, "batch sizes must be positive");
    if (virtual_batch % micro_batch != 0) {
      throw Error(ErrorKind::kConfiguration, "virtual batch must be a multiple of the micro batch");
    }
    if (max_length < 2) throw Error(ErrorKind::kConfiguration, "max length must be at least 2 tokens");
  }

  std::size_t accumulation_steps() const { return virtual_batch / micro_batch; }

  // Linear warmup over `warmup_steps` optimizer steps (1-based), then flat.
  double learning_rate_at(std::size_t step) const {
    if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
};

// Decoupled-weight-decay Adam over every adapter factor.
class AdamW {
 public:
  AdamW(const ModelAdapters& adapters, const TrainingConfig& cfg)
      : cfg_(cfg), m_(AdapterGradients::zeros_like(adapters)), v_(AdapterGradients::zeros_like(adapters)) {}

  void step(ModelAdapters& adapters, const AdapterGradients& grads) {
    ++t_;
    const double lr = cfg_.learning_rate_at(t_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](Matrix& p, const Matrix& g, Matrix& m, Matrix& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g.data()[i];
        m.data()[i] = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi;
        v.data()[i] = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m.data()[i] / bc1;
        const double vh = v.data()[i] / bc2;
        p.data()[i] -= lr * (mh / (std::sqrt(vh) + cfg_.epsilon) + cfg_.weight_decay * p.data()[i]);
      }
    };
    for (std::size_t l = 0; l < adapters.size(); ++l) {
      if (adapters[l].query) {
        update(adapters[l].query->a, grads.layers[l].query->a, m_.layers[l].query->a, v_.layers[l].query->a);
        update(adapters[l].query->b, grads.layers[l].query->b, m_.layers[l].query->b, v_.layers[l].query->b);
      }
      if (adapters[l].value) {
        update(adapters[l].value->a, grads.layers[l].value->a, m_.layers[l].value->a, v_.layers[l].value->a);
        update(adapters[l].value->b, grads.layers[l].value->b, m_.layers[l].value->b, v_.layers[l].value->b);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  TrainingConfig cfg_;
  AdapterGradients m_;
  AdapterGradients v_;
  std::size_t t_ = 0;
};

struct StepLoss {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // global optimizer step, 1-based
  double loss = 0.0;
};

struct TrainResult {
  ModelAdapters adapters;
  std::vector<double> epoch_losses;  // mean per-example loss, one per epoch
  std::vector<StepLoss> step_losses;
};

// Trains the adapters on pre-tokenized examples. The base model is taken by
// const reference and is never modified.
inline TrainResult train_examples(const ToyModel& model, std::span<const TrainingExample> examples,
                                  const TrainingConfig& tcfg, ModelAdapters adapters) {
  tcfg.validate();
  if (examples.empty()) throw Error(ErrorKind::kConfiguration, "training set is empty");

  TrainResult result;
  AdamW opt(adapters, tcfg);
  std::mt19937_64 shuffle_rng(tcfg.seed);
  std::mt19937_64 dropout_rng(tcfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<const TrainingExample*> order;
  for (const auto& ex : examples) order.push_back(&ex);

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    if (tcfg.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += tcfg.virtual_batch) {
      const std::size_t end = std::min(order.size(), start + tcfg.virtual_batch);
      auto accumulated = AdapterGradients::zeros_like(adapters);
      double batch_loss = 0.0;
      std::size_t batch_count = 0;
      for (std::size_t mb = start; mb < end; mb += tcfg.micro_batch) {
        const std::size_t mb_end = std::min(end, mb + tcfg.micro_batch);
        std::span<const TrainingExample* const> micro(order.data() + mb, mb_end - mb);
        auto g = batch_gradient(model, adapters, micro, &dropout_rng);
        if (g.count == 0) continue;
        if (!std::isfinite(g.loss)) throw NumericError(opt.steps() + 1, "non-finite loss");
        accumulated.add_scaled(g.grads, static_cast<double>(g.count));
        batch_loss += g.loss * static_cast<double>(g.count);
        batch_count += g.count;
      }
      if (batch_count == 0) continue;
      accumulated.scale(1.0 / static_cast<double>(batch_count));
      opt.step(adapters, accumulated);
      epoch_loss += batch_loss;
      epoch_count += batch_count;
      result.step_losses.push_back({epoch, opt.steps(), batch_loss / static_cast<double>(batch_count)});
    }
    if (epoch_count == 0) throw Error(ErrorKind::kConfiguration, "no example has scored tokens after truncation");
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(epoch_count));
  }
  result.adapters = std::move(adapters);
  return result;
}

inline TrainResult train(const ToyModel& model, const CharTokenizer& tokenizer, std::span<const std::string> prompts,
                         const TrainingConfig& tcfg, const LoraConfig& lcfg) {
  tcfg.validate();
  if (prompts.empty()) throw Error(ErrorKind::kConfiguration, "training set is empty");
  lcfg.validate(model.config.d_model, model.config.d_model);
  const std::size_t max_len = std::min(tcfg.max_length, model.config.max_len);
  std::vector<TrainingExample> examples;
  examples.reserve(prompts.size());
  for (const auto& p : prompts) examples.push_back(make_training_example(tokenizer, p, max_len));
  return train_examples(model, examples, tcfg, attach_adapters(model, lcfg, tcfg.seed));
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic adapter gradients with central differences. The
// relative error uses max(|analytic|, |numeric|, floor) as denominator so
// that vanishing gradients are judged in absolute terms.
inline GradCheckResult grad_check(const ToyModel& model, const ModelAdapters& adapters,
                                  const TrainingExample& sample, double h = 1e-5, double floor = 1e-6) {
  auto analytic = AdapterGradients::zeros_like(adapters);
  if (!example_loss(model, adapters, sample, &analytic)) {
    throw Error(ErrorKind::kPrecondition, "grad check sample has no scored tokens");
  }
  ModelAdapters probe = adapters;
  GradCheckResult result;
  auto check = [&](Matrix& param, const Matrix& grad) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double saved = param.data()[i];
      param.data()[i] = saved + h;
      const double up = *example_loss(model, probe, sample, nullptr);
      param.data()[i] = saved - h;
      const double down = *example_loss(model, probe, sample, nullptr);
      param.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = grad.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  };
  for (std::size_t l = 0; l < probe.size(); ++l) {
    if (probe[l].query) {
      check(probe[l].query->a, analytic.layers[l].query->a);
      check(probe[l].query->b, analytic.layers[l].query->b);
    }
    if (probe[l].value) {
      check(probe[l].value->a, analytic.layers[l].value->a);
      check(probe[l].value->b, analytic.layers[l].value->b);
    }
  }
  return result;
}

}  // namespace istruttore
