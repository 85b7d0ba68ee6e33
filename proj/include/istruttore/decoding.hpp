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

// Token-level decoding over any logits provider: a callable mapping the
// current prefix to next-token logits.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "istruttore/error.hpp"

namespace istruttore {

enum class DecodingMode { kSample, kBeam };

struct DecodingConfig {
  double temperature = 0.2;
  double top_p = 0.75;
  std::size_t top_k = 40;
  std::size_t num_beams = 4;
  std::size_t max_new_tokens = 128;
  std::uint64_t seed = 0;
  DecodingMode mode = DecodingMode::kSample;

  void validate() const {
    if (!(temperature > 0.0)) throw Error(ErrorKind::kConfiguration, "temperature must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorKind::kConfiguration, "top-p must lie in (0, 1]");
    if (top_k == 0) throw Error(ErrorKind::kConfiguration, "top-k must be positive");
    if (num_beams == 0) throw Error(ErrorKind::kConfiguration, "num_beams must be positive");
    if (max_new_tokens == 0) throw Error(ErrorKind::kConfiguration, "max_new_tokens must be positive");
  }
};

inline DecodingMode parse_decoding_mode(const std::string& s) {
  if (s == "sample") return DecodingMode::kSample;
  if (s == "beam") return DecodingMode::kBeam;
  throw Error(ErrorKind::kConfiguration, "decoding mode must be 'sample' or 'beam', got '" + s + "'");
}

inline std::vector<double> apply_temperature(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::kConfiguration, "temperature must be positive");
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v /= temperature;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= log_z;
  return out;
}

struct TokenProb {
  std::size_t index = 0;
  double prob = 0.0;

  bool operator==(const TokenProb&) const = default;
};

// Support of a filtered distribution, ordered by descending probability.
using Distribution = std::vector<TokenProb>;

// Top-k, then nucleus filtering, then renormalization. Ties keep the lower
// index first.
inline Distribution filter_top_k_top_p(std::span<const double> logits, std::size_t k, double p) {
  if (logits.empty()) throw Error(ErrorKind::kPrecondition, "empty logits");
  if (k == 0) throw Error(ErrorKind::kConfiguration, "top-k must be positive");
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorKind::kConfiguration, "top-p must lie in (0, 1]");

  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  order.resize(std::min(k, order.size()));

  std::vector<double> kept(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) kept[i] = logits[order[i]];
  const auto probs = softmax(kept);

  std::size_t keep = probs.size();
  if (p < 1.0) {
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (cum >= p) {
        keep = i + 1;
        break;
      }
    }
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += probs[i];
  Distribution out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back({order[i], probs[i] / mass});
  return out;
}

// Uniform double in [0, 1) from the top 53 bits; identical across standard
// libraries for a given engine state.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t sample_token(const Distribution& dist, std::mt19937_64& rng) {
  if (dist.empty()) throw NumericError(0, "cannot sample from an empty distribution");
  double total = 0.0;
  for (const auto& tp : dist) {
    if (!(tp.prob >= 0.0)) throw NumericError(0, "negative or NaN probability");
    total += tp.prob;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw NumericError(0, "distribution sums to " + std::to_string(total) + ", not 1");
  }
  const double u = uniform01(rng) * total;
  double cum = 0.0;
  for (const auto& tp : dist) {
    cum += tp.prob;
    if (u < cum) return tp.index;
  }
  // Rounding left u at the very top; return the last token with mass.
  for (auto it = dist.rbegin(); it != dist.rend(); ++it) {
    if (it->prob > 0.0) return it->index;
  }
  return dist.back().index;
}

template <typename P>
concept LogitsProvider = requires(P p, std::span<const int> prefix) {
  { p(prefix) } -> std::convertible_to<std::vector<double>>;
};

// temperature -> top-k -> top-p -> draw, until EOS or max_new_tokens.
// Returns only the generated tokens (EOS included when produced).
template <LogitsProvider P>
std::vector<int> sample_decode(P&& model, std::span<const int> prompt, const DecodingConfig& cfg, int eos) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> generated;
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    const std::vector<double> logits = model(std::span<const int>(seq));
    const auto scaled = apply_temperature(logits, cfg.temperature);
    const auto dist = filter_top_k_top_p(scaled, cfg.top_k, cfg.top_p);
    const int tok = static_cast<int>(sample_token(dist, rng));
    generated.push_back(tok);
    seq.push_back(tok);
    if (tok == eos) break;
  }
  return generated;
}

template <LogitsProvider P>
std::vector<int> greedy_decode(P&& model, std::span<const int> prompt, std::size_t max_new_tokens, int eos) {
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> generated;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    const std::vector<double> logits = model(std::span<const int>(seq));
    const int tok = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    generated.push_back(tok);
    seq.push_back(tok);
    if (tok == eos) break;
  }
  return generated;
}

struct BeamHypothesis {
  std::vector<int> tokens;  // generated tokens only
  double log_prob = 0.0;    // sum of token log-probabilities
  std::size_t completed_at = 0;

  double score() const { return tokens.empty() ? log_prob : log_prob / static_cast<double>(tokens.size()); }
};

// Ranking of finished hypotheses: higher mean log-probability, then earlier
// completion, then lexicographically smaller tokens.
inline bool better_hypothesis(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  if (a.completed_at != b.completed_at) return a.completed_at < b.completed_at;
  return a.tokens < b.tokens;
}

// Length-normalized beam search. At every step the num_beams best
// expansions (by cumulative log-probability) survive; those ending in EOS
// finish and release their slot. Beams still open after max_new_tokens
// finish there.
template <LogitsProvider P>
BeamHypothesis beam_search(P&& model, std::span<const int> prompt, std::size_t num_beams,
                           std::size_t max_new_tokens, int eos) {
  if (num_beams == 0) throw Error(ErrorKind::kConfiguration, "num_beams must be positive");
  if (max_new_tokens == 0) throw Error(ErrorKind::kConfiguration, "max_new_tokens must be positive");

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };

  std::vector<BeamHypothesis> active{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;
  std::vector<int> seq;
  for (std::size_t step = 1; step <= max_new_tokens && !active.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < active.size(); ++b) {
      seq.assign(prompt.begin(), prompt.end());
      seq.insert(seq.end(), active[b].tokens.begin(), active[b].tokens.end());
      const std::vector<double> logits = model(std::span<const int>(seq));
      const auto lp = log_softmax(logits);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        candidates.push_back({b, static_cast<int>(t), active[b].log_prob + lp[t]});
      }
    }
    const std::size_t keep = std::min(num_beams, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<BeamHypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& c = candidates[i];
      BeamHypothesis h{active[c.parent].tokens, c.log_prob, step};
      h.tokens.push_back(c.token);
      if (c.token == eos) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    active = std::move(next);
  }
  for (auto& h : active) {
    h.completed_at = max_new_tokens;
    finished.push_back(std::move(h));
  }
  return *std::min_element(finished.begin(), finished.end(),
                           [](const BeamHypothesis& a, const BeamHypothesis& b) { return better_hypothesis(a, b); });
}

}  // namespace istruttore
