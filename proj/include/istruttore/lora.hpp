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

// Low-rank adapters: W' = W + (alpha / r) * B * A, with A (r x d_in) drawn
// from a seeded Gaussian and B (d_out x r) starting at zero.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>

#include "istruttore/error.hpp"
#include "istruttore/matrix.hpp"

namespace istruttore {

enum class Projection { kQuery, kValue };

inline const char* to_string(Projection p) { return p == Projection::kQuery ? "q" : "v"; }

inline Projection parse_projection(const std::string& s) {
  if (s == "q" || s == "query" || s == "Query") return Projection::kQuery;
  if (s == "v" || s == "value" || s == "Value") return Projection::kValue;
  throw Error(ErrorKind::kConfiguration, "unknown projection '" + s + "' (expected q or v)");
}

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  double dropout = 0.05;
  std::set<Projection> targets{Projection::kQuery, Projection::kValue};

  double scaling() const { return alpha / static_cast<double>(rank); }

  bool targets_projection(Projection p) const { return targets.count(p) != 0; }

  void validate(std::size_t d_in, std::size_t d_out) const {
    if (rank == 0) throw Error(ErrorKind::kConfiguration, "LoRA rank must be positive");
    if (!(alpha > 0.0)) throw Error(ErrorKind::kConfiguration, "LoRA alpha must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw Error(ErrorKind::kConfiguration, "LoRA dropout must lie in [0, 1)");
    }
    if (rank > std::min(d_in, d_out)) {
      throw Error(ErrorKind::kConfiguration, "LoRA rank " + std::to_string(rank) +
                                                 " exceeds min(d_in, d_out) = " +
                                                 std::to_string(std::min(d_in, d_out)));
    }
  }

  bool operator==(const LoraConfig&) const = default;
};

inline constexpr double kAdapterInitStd = 0.02;

struct LoraAdapter {
  Matrix a;  // r x d_in
  Matrix b;  // d_out x r
  LoraConfig config;

  std::size_t d_in() const noexcept { return a.cols(); }
  std::size_t d_out() const noexcept { return b.rows(); }
  std::size_t parameter_count() const noexcept { return a.size() + b.size(); }

  void check_shapes() const {
    if (a.rows() != config.rank || b.cols() != config.rank) {
      throw Error(ErrorKind::kDimension, "adapter A " + a.shape_string() + " / B " +
                                             b.shape_string() + " do not match rank " +
                                             std::to_string(config.rank));
    }
  }

  bool operator==(const LoraAdapter&) const = default;
};

inline LoraAdapter init_adapter(std::size_t d_in, std::size_t d_out, const LoraConfig& config,
                                std::uint64_t seed) {
  config.validate(d_in, d_out);
  LoraAdapter adapter{Matrix(config.rank, d_in), Matrix(d_out, config.rank), config};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, kAdapterInitStd);
  for (double& v : adapter.a.data()) v = gauss(rng);
  return adapter;
}

// (alpha / r) * B * A, shape d_out x d_in.
inline Matrix adapter_delta(const LoraAdapter& adapter) {
  adapter.check_shapes();
  return matmul(adapter.b, adapter.a) * adapter.config.scaling();
}

inline Matrix merge_weights(const Matrix& base, const LoraAdapter& adapter) {
  if (base.rows() != adapter.d_out() || base.cols() != adapter.d_in()) {
    throw Error(ErrorKind::kDimension, "base " + base.shape_string() + " vs adapter " +
                                           std::to_string(adapter.d_out()) + "x" +
                                           std::to_string(adapter.d_in()));
  }
  return base + adapter_delta(adapter);
}

}  // namespace istruttore
