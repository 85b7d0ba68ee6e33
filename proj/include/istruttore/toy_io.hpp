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

// Adapter checkpoints, loss history CSV, and a generator backed by the toy
// model.

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "istruttore/decoding.hpp"
#include "istruttore/error.hpp"
#include "istruttore/harness.hpp"
#include "istruttore/lora.hpp"
#include "istruttore/matrix.hpp"
#include "istruttore/text.hpp"
#include "istruttore/toy_model.hpp"
#include "json.hpp"

namespace istruttore {

// Base model recipe stored next to the adapters so a checkpoint can be
// loaded without the training corpus.
struct BaseModelSpec {
  ToyModelConfig config;
  CharTokenizer tokenizer;
};

struct AdapterCheckpoint {
  LoraConfig config;
  ModelAdapters adapters;
  std::optional<BaseModelSpec> base_model;
};

namespace detail {

inline nlohmann::ordered_json matrix_to_json(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw SchemaError(what, 0, "expected an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw SchemaError(what, r, "ragged or non-array row");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw SchemaError(what, r, "non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

inline std::string layer_name(std::size_t layer, Projection p) {
  return "layers." + std::to_string(layer) + "." + to_string(p);
}

}  // namespace detail

inline std::string save_adapter_checkpoint(const AdapterCheckpoint& ckpt) {
  nlohmann::ordered_json j;
  std::vector<std::string> targets;
  for (Projection p : ckpt.config.targets) targets.emplace_back(to_string(p));
  j["config"] = {{"r", ckpt.config.rank},
                 {"alpha", ckpt.config.alpha},
                 {"dropout", ckpt.config.dropout},
                 {"targets", targets}};
  auto layers = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < ckpt.adapters.size(); ++l) {
    for (Projection p : {Projection::kQuery, Projection::kValue}) {
      const auto& a = p == Projection::kQuery ? ckpt.adapters[l].query : ckpt.adapters[l].value;
      if (!a) continue;
      layers.push_back(
          {{"name", detail::layer_name(l, p)}, {"A", detail::matrix_to_json(a->a)}, {"B", detail::matrix_to_json(a->b)}});
    }
  }
  j["layers"] = layers;
  if (ckpt.base_model) {
    const auto& c = ckpt.base_model->config;
    j["base_model"] = {{"alphabet", text::encode_utf8(ckpt.base_model->tokenizer.alphabet())},
                       {"d_model", c.d_model},
                       {"n_layers", c.n_layers},
                       {"d_ff", c.d_ff},
                       {"max_len", c.max_len},
                       {"seed", c.seed}};
  }
  return j.dump(2) + "\n";
}

inline AdapterCheckpoint load_adapter_checkpoint(std::string_view raw) {
  const auto j = detail::parse_json(raw);
  if (!j.is_object()) throw SchemaError("config", 0, "checkpoint must be a JSON object");
  AdapterCheckpoint ckpt;
  const auto& cfg = detail::require(j, "config", 0);
  ckpt.config.rank = cfg.at("r").get<std::size_t>();
  ckpt.config.alpha = cfg.at("alpha").get<double>();
  ckpt.config.dropout = cfg.at("dropout").get<double>();
  ckpt.config.targets.clear();
  for (const auto& t : cfg.at("targets")) ckpt.config.targets.insert(parse_projection(t.get<std::string>()));

  for (const auto& layer : detail::require(j, "layers", 0)) {
    const auto name = layer.at("name").get<std::string>();
    const auto dot1 = name.find('.');
    const auto dot2 = name.rfind('.');
    if (name.rfind("layers.", 0) != 0 || dot1 == dot2) throw SchemaError("name", 0, "bad layer name '" + name + "'");
    const std::size_t index = std::stoul(name.substr(dot1 + 1, dot2 - dot1 - 1));
    const Projection p = parse_projection(name.substr(dot2 + 1));
    LoraAdapter a{detail::matrix_from_json(layer.at("A"), name + ".A"), detail::matrix_from_json(layer.at("B"), name + ".B"),
                  ckpt.config};
    a.check_shapes();
    if (ckpt.adapters.size() <= index) ckpt.adapters.resize(index + 1);
    (p == Projection::kQuery ? ckpt.adapters[index].query : ckpt.adapters[index].value) = std::move(a);
  }

  if (auto it = j.find("base_model"); it != j.end()) {
    BaseModelSpec spec;
    spec.tokenizer = CharTokenizer(text::decode_utf8(it->at("alphabet").get<std::string>()));
    spec.config.vocab_size = spec.tokenizer.vocab_size();
    spec.config.d_model = it->at("d_model").get<std::size_t>();
    spec.config.n_layers = it->at("n_layers").get<std::size_t>();
    spec.config.d_ff = it->at("d_ff").get<std::size_t>();
    spec.config.max_len = it->at("max_len").get<std::size_t>();
    spec.config.seed = it->at("seed").get<std::uint64_t>();
    ckpt.base_model = std::move(spec);
  }
  return ckpt;
}

inline std::string loss_history_csv(const std::vector<StepLoss>& losses) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,step,loss\n";
  for (const auto& s : losses) out << s.epoch << ',' << s.step << ',' << s.loss << '\n';
  return out.str();
}

// Continues a rendered prompt with the (merged) toy model. Contexts longer
// than the model's window keep only their most recent tokens.
class ToyModelGenerator : public Generator {
 public:
  ToyModelGenerator(const ToyModel& base, const ModelAdapters& adapters, CharTokenizer tokenizer,
                    DecodingConfig decoding)
      : model_(merge_adapters(base, adapters)), tokenizer_(std::move(tokenizer)), decoding_(decoding) {
    decoding_.validate();
  }

  std::string generate(const GenerationRequest& request) override {
    std::vector<int> prompt{CharTokenizer::kBos};
    const auto body = tokenizer_.encode(request.prompt.text);
    prompt.insert(prompt.end(), body.begin(), body.end());
    const std::size_t window = model_.config.max_len;
    auto logits = [&](std::span<const int> prefix) {
      if (prefix.size() > window) prefix = prefix.subspan(prefix.size() - window);
      const auto all = forward_logits(model_, nullptr, prefix);
      const auto last = all.row(all.rows() - 1);
      return std::vector<double>(last.begin(), last.end());
    };
    std::vector<int> out;
    if (decoding_.mode == DecodingMode::kBeam) {
      out = beam_search(logits, prompt, decoding_.num_beams, decoding_.max_new_tokens, CharTokenizer::kEos).tokens;
    } else {
      auto cfg = decoding_;
      cfg.seed = decoding_.seed + request.index;
      out = sample_decode(logits, prompt, cfg, CharTokenizer::kEos);
    }
    return tokenizer_.decode(out);
  }

 private:
  ToyModel model_;
  CharTokenizer tokenizer_;
  DecodingConfig decoding_;
};

}  // namespace istruttore
