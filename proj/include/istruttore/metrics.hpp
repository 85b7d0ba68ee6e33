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

// Generative-text metrics: ROUGE-1/2/L, SQuAD exact match and token F1,
// BERTScore over a pluggable token embedder, and score aggregation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "istruttore/error.hpp"
#include "istruttore/text.hpp"

namespace istruttore {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double harmonic_mean(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline RougeScore make_rouge(double overlap, double pred_total, double ref_total) {
  RougeScore s;
  s.precision = pred_total > 0 ? overlap / pred_total : 0.0;
  s.recall = ref_total > 0 ? overlap / ref_total : 0.0;
  s.f1 = harmonic_mean(s.precision, s.recall);
  return s;
}

// Lowercased runs of word characters; no stemming, no stopwords.
inline std::vector<std::string> rouge_tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::u32string current;
  for (char32_t c : text::decode_utf8(s)) {
    if (text::is_word_char(c)) {
      current.push_back(text::to_lower(c));
    } else if (!current.empty()) {
      out.push_back(text::encode_utf8(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(text::encode_utf8(current));
  return out;
}

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::vector<std::string>, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

inline RougeScore rouge_n_tokens(const std::vector<std::string>& pred, const std::vector<std::string>& ref,
                                 std::size_t n) {
  if (n == 0) throw Error(ErrorKind::kPrecondition, "ROUGE-N needs n >= 1");
  const auto pc = ngram_counts(pred, n);
  const auto rc = ngram_counts(ref, n);
  double overlap = 0.0;
  for (const auto& [gram, count] : pc) {
    if (auto it = rc.find(gram); it != rc.end()) overlap += std::min(count, it->second);
  }
  const double pred_total = pred.size() >= n ? static_cast<double>(pred.size() - n + 1) : 0.0;
  const double ref_total = ref.size() >= n ? static_cast<double>(ref.size() - n + 1) : 0.0;
  return make_rouge(overlap, pred_total, ref_total);
}

inline RougeScore rouge_n(std::string_view prediction, std::string_view reference, std::size_t n) {
  return rouge_n_tokens(rouge_tokenize(prediction), rouge_tokenize(reference), n);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline RougeScore rouge_l_tokens(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  return make_rouge(static_cast<double>(lcs_length(pred, ref)), static_cast<double>(pred.size()),
                    static_cast<double>(ref.size()));
}

inline RougeScore rouge_l(std::string_view prediction, std::string_view reference) {
  return rouge_l_tokens(rouge_tokenize(prediction), rouge_tokenize(reference));
}

// ---------------------------------------------------------------------------
// SQuAD

struct SquadScore {
  int em = 0;
  double f1 = 0.0;
};

inline bool is_ascii_punctuation(char c) {
  static constexpr std::string_view kPunct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
  return kPunct.find(c) != std::string_view::npos;
}

// lowercase, drop ASCII punctuation, drop the English articles a/an/the,
// collapse whitespace.
inline std::string squad_normalize(std::string_view answer) {
  std::string lowered = text::to_lower(answer);
  std::string no_punct;
  no_punct.reserve(lowered.size());
  for (char c : lowered) {
    if (!is_ascii_punctuation(c)) no_punct.push_back(c);
  }
  std::string out;
  for (const auto& tok : text::split_whitespace(no_punct)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

inline double squad_token_f1(const std::string& normalized_pred, const std::string& normalized_gold) {
  const auto p = text::split_whitespace(normalized_pred);
  const auto g = text::split_whitespace(normalized_gold);
  if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;
  std::unordered_map<std::string, int> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  int same = 0;
  for (const auto& t : p) {
    if (auto it = gold_counts.find(t); it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  if (same == 0) return 0.0;
  const double precision = static_cast<double>(same) / static_cast<double>(p.size());
  const double recall = static_cast<double>(same) / static_cast<double>(g.size());
  return harmonic_mean(precision, recall);
}

inline SquadScore squad_em_f1(std::string_view prediction, const std::vector<std::string>& gold_answers) {
  if (gold_answers.empty()) throw Error(ErrorKind::kPrecondition, "SQuAD scoring needs at least one gold answer");
  const auto pred = squad_normalize(prediction);
  SquadScore s;
  for (const auto& gold : gold_answers) {
    const auto g = squad_normalize(gold);
    if (pred == g) s.em = 1;
    s.f1 = std::max(s.f1, squad_token_f1(pred, g));
  }
  return s;
}

// ---------------------------------------------------------------------------
// BERTScore

struct TokenEmbeddings {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> vectors;  // one per token
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual TokenEmbeddings embed(std::string_view text) const = 0;
};

// Deterministic stand-in for a contextual encoder: each ROUGE token maps to
// a signed feature-hashed bag of its character trigrams.
class HashingEmbedder : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dim = 64) : dim_(dim) {}

  TokenEmbeddings embed(std::string_view s) const override {
    TokenEmbeddings out;
    out.tokens = rouge_tokenize(s);
    for (const auto& tok : out.tokens) {
      std::vector<double> v(dim_, 0.0);
      const auto cps = text::decode_utf8("#" + tok + "#");
      // Tokens are non-empty, so the padded form has at least one trigram.
      for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
        const std::uint64_t h = fnv1a(text::encode_utf8(std::u32string_view(cps).substr(i, 3)));
        v[h % dim_] += (h >> 63) ? -1.0 : 1.0;
      }
      out.vectors.push_back(std::move(v));
    }
    return out;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  std::size_t dim_;
};

struct BertScoreResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double rescaled_f1 = 0.0;
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::kDimension, "embedding sizes differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Greedy max-cosine matching without idf weighting.
inline BertScoreResult bertscore(const TokenEmbeddings& prediction, const TokenEmbeddings& reference,
                                 double baseline = 0.0) {
  if (prediction.vectors.empty() || reference.vectors.empty()) {
    throw Error(ErrorKind::kUndefinedScore, "BERTScore needs at least one token on each side");
  }
  if (!(baseline < 1.0)) throw Error(ErrorKind::kConfiguration, "BERTScore baseline must be below 1");
  const std::size_t np = prediction.vectors.size();
  const std::size_t nr = reference.vectors.size();
  std::vector<double> best_for_pred(np, -1.0), best_for_ref(nr, -1.0);
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < nr; ++j) {
      const double c = cosine_similarity(prediction.vectors[i], reference.vectors[j]);
      best_for_pred[i] = std::max(best_for_pred[i], c);
      best_for_ref[j] = std::max(best_for_ref[j], c);
    }
  }
  BertScoreResult r;
  for (double v : best_for_pred) r.precision += v;
  for (double v : best_for_ref) r.recall += v;
  r.precision /= static_cast<double>(np);
  r.recall /= static_cast<double>(nr);
  r.f1 = harmonic_mean(r.precision, r.recall);
  r.rescaled_f1 = (r.f1 - baseline) / (1.0 - baseline);
  return r;
}

// ---------------------------------------------------------------------------
// Per-example reports and aggregation

enum class Metric { kR1, kR2, kRL, kBS, kEM, kF1, kEMGPT };
inline constexpr std::size_t kMetricCount = 7;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics{Metric::kR1, Metric::kR2, Metric::kRL, Metric::kBS,
                                                              Metric::kEM, Metric::kF1, Metric::kEMGPT};

inline const char* metric_key(Metric m) {
  switch (m) {
    case Metric::kR1: return "r1";
    case Metric::kR2: return "r2";
    case Metric::kRL: return "rl";
    case Metric::kBS: return "bs";
    case Metric::kEM: return "em";
    case Metric::kF1: return "f1";
    case Metric::kEMGPT: return "em_gpt";
  }
  return "?";
}

inline const char* metric_label(Metric m) {
  switch (m) {
    case Metric::kR1: return "R1";
    case Metric::kR2: return "R2";
    case Metric::kRL: return "RL";
    case Metric::kBS: return "BS";
    case Metric::kEM: return "EM";
    case Metric::kF1: return "F1";
    case Metric::kEMGPT: return "EM-GPT";
  }
  return "?";
}

struct ScoreReport {
  std::string id;
  std::string system;
  std::string task;
  std::string group;  // grouping key, e.g. the newspaper; empty when ungrouped
  std::array<std::optional<double>, kMetricCount> values{};
  std::vector<std::string> flags;

  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }

  bool has_flag(std::string_view f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

struct AggregateReport {
  std::array<std::optional<double>, kMetricCount> values{};
  std::size_t count = 0;
  double empty_answer_rate = 0.0;
  double verbatim_copy_rate = 0.0;

  const std::optional<double>& operator[](Metric m) const { return values[static_cast<std::size_t>(m)]; }
};

// Unweighted mean per metric. With grouping, the mean is taken per group
// first and then across groups, so every group weighs the same. EM-GPT
// verdicts are 0/1, so their mean is the fraction judged correct.
inline AggregateReport aggregate(const std::vector<ScoreReport>& per_example, bool grouping = false) {
  if (per_example.empty()) throw Error(ErrorKind::kPrecondition, "cannot aggregate an empty score list");
  std::map<std::string, std::vector<const ScoreReport*>> groups;
  for (const auto& s : per_example) groups[grouping ? s.group : std::string()].push_back(&s);

  AggregateReport out;
  out.count = per_example.size();
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    double across = 0.0;
    std::size_t groups_with_values = 0;
    for (const auto& [key, members] : groups) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto* s : members) {
        if (s->values[m]) {
          sum += *s->values[m];
          ++n;
        }
      }
      if (n == 0) continue;
      across += sum / static_cast<double>(n);
      ++groups_with_values;
    }
    if (groups_with_values > 0) out.values[m] = across / static_cast<double>(groups_with_values);
  }
  std::size_t empty = 0, copy = 0;
  for (const auto& s : per_example) {
    empty += s.has_flag("EmptyAnswer") ? 1 : 0;
    copy += s.has_flag("VerbatimCopy") ? 1 : 0;
  }
  out.empty_answer_rate = static_cast<double>(empty) / static_cast<double>(out.count);
  out.verbatim_copy_rate = static_cast<double>(copy) / static_cast<double>(out.count);
  return out;
}

}  // namespace istruttore
