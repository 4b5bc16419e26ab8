// Copyright 2026 The CVR Clean Room Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reference implementations the tests compare against. Each one takes a
// different route from the library code: explicit merged weights, finite
// differences, pairwise counting, bit-level rounding.

#ifndef CVR_TESTS_ORACLES_H_
#define CVR_TESTS_ORACLES_H_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cvr/model.h"

namespace cvr::oracle {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// q = e^eps / (e^eps + 1), straight from the definition.
inline double keep_prob(double eps) { return std::exp(eps) / (std::exp(eps) + 1.0); }

// Forward pass with W + gate * (alpha/r) * B A merged up front.
inline std::vector<double> merged_forward(const AdaptedModel& model, const std::string* adapter_id,
                                          const DenseMatrix& x) {
  const BaseModel& base = model.base();
  std::vector<DenseMatrix> weights;
  for (size_t l = 0; l < base.layers.size(); ++l) {
    DenseMatrix w = base.layers[l].weight;
    if (adapter_id) {
      if (const AdapterLayer* a = model.adapter(*adapter_id).find(l); a && a->gate) {
        for (size_t o = 0; o < w.rows(); ++o) {
          for (size_t i = 0; i < w.cols(); ++i) {
            long double acc = 0.0L;
            for (size_t k = 0; k < a->rank; ++k) acc += a->up(o, k) * a->down(k, i);
            w(o, i) += a->scale() * static_cast<double>(acc);
          }
        }
      }
    }
    weights.push_back(std::move(w));
  }
  std::vector<double> out(x.rows());
  for (size_t s = 0; s < x.rows(); ++s) {
    std::vector<double> act(x.row(s).begin(), x.row(s).end());
    for (size_t l = 0; l < base.layers.size(); ++l) {
      std::vector<double> next(weights[l].rows());
      for (size_t o = 0; o < next.size(); ++o) {
        long double acc = base.layers[l].bias[o];
        for (size_t i = 0; i < act.size(); ++i) acc += weights[l](o, i) * act[i];
        next[o] = static_cast<double>(acc);
        if (base.layers[l].activation == Activation::kRelu) next[o] = std::max(0.0, next[o]);
      }
      act = std::move(next);
    }
    out[s] = act[0];
  }
  return out;
}

// Central difference of z_row with respect to adapter parameter j.
inline double fd_param_grad(const AdaptedModel& model, const std::string& id,
                            const DenseMatrix& x_row, size_t j, double h) {
  AdaptedModel plus = model;
  AdaptedModel minus = model;
  std::vector<double> p = model.flatten_params(id).values;
  const double v = p[j];
  p[j] = v + h;
  plus.set_params(id, p);
  p[j] = v - h;
  minus.set_params(id, p);
  return (forward(plus, id, x_row)[0] - forward(minus, id, x_row)[0]) / (2.0 * h);
}

// sum_i (p_i - y_i) G[i], accumulated in long double.
inline std::vector<double> naive_aggregate(const DenseMatrix& g, std::span<const double> logits,
                                           std::span<const uint8_t> y) {
  std::vector<long double> acc(g.cols(), 0.0L);
  for (size_t i = 0; i < g.rows(); ++i) {
    const long double r = sigmoid(logits[i]) - static_cast<double>(y[i]);
    for (size_t j = 0; j < g.cols(); ++j) acc[j] += r * g(i, j);
  }
  return {acc.begin(), acc.end()};
}

// Fraction of (pos, neg) pairs ordered correctly, ties counting one half.
inline double pairwise_auc(std::span<const double> s, std::span<const uint8_t> y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (size_t k = 0; k < s.size(); ++k) {
      if (y[k]) continue;
      pairs += 1.0;
      wins += s[i] > s[k] ? 1.0 : (s[i] == s[k] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Nearest of the two bf16 neighbours by exact double distance, ties to the
// even mantissa. Finite inputs only.
inline float bf16_round(float v) {
  const uint32_t bits = std::bit_cast<uint32_t>(v);
  const uint32_t lo = bits & 0xFFFF0000u;
  const uint32_t hi = lo + 0x10000u;
  const double dv = v;
  const double dlo = std::bit_cast<float>(lo);
  const double dhi = std::bit_cast<float>(hi);
  const double elo = std::abs(dv - dlo);
  const double ehi = std::abs(dhi - dv);
  if (elo < ehi) return std::bit_cast<float>(lo);
  if (ehi < elo) return std::bit_cast<float>(hi);
  return ((lo >> 16) & 1u) == 0 ? std::bit_cast<float>(lo) : std::bit_cast<float>(hi);
}

inline double l2(std::span<const double> v) {
  long double s = 0.0L;
  for (double e : v) s += static_cast<long double>(e) * e;
  return std::sqrt(static_cast<double>(s));
}

inline double rel_l2(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double denom = l2(b);
  return denom == 0.0 ? l2(d) : l2(d) / denom;
}

inline DenseMatrix random_matrix(size_t rows, size_t cols, uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

inline std::vector<uint8_t> random_labels(size_t n, double rate, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(rate);
  std::vector<uint8_t> y(n);
  for (auto& v : y) v = b(rng) ? 1 : 0;
  return y;
}

}  // namespace cvr::oracle

#endif  // CVR_TESTS_ORACLES_H_
