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

#include "cvr/audit.h"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "cvr/common.h"
#include "cvr/privacy.h"
#include "cvr/session.h"

namespace cvr {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double majority_rate(std::span<const uint8_t> y) {
  const size_t pos = std::count(y.begin(), y.end(), uint8_t{1});
  return static_cast<double>(std::max(pos, y.size() - pos)) / static_cast<double>(y.size());
}

}  // namespace

std::string_view regime_name(LeakageRegime r) {
  return r == LeakageRegime::kDetermined ? "determined" : "underdetermined";
}

RecoveredLabels recover_labels(const PerSampleGrads& grads, std::span<const double> agg,
                               std::span<const double> probs,
                               std::span<const uint8_t> true_labels) {
  const size_t b = grads.batch_size();
  const size_t f = grads.param_count();
  if (b == 0) throw std::invalid_argument("recover_labels: empty batch");
  if (agg.size() != f) throw std::invalid_argument("recover_labels: aggregate length != param_count");
  if (probs.size() != b || true_labels.size() != b) {
    throw std::invalid_argument("recover_labels: probs/labels length != batch size");
  }

  RecoveredLabels out;
  LeakageReport& r = out.report;
  r.batch_size = b;
  r.param_count = f;
  r.regime = f >= b ? LeakageRegime::kDetermined : LeakageRegime::kUnderdetermined;
  r.majority_rate = majority_rate(true_labels);

  Eigen::Map<const RowMatrix> g(grads.g.values().data(), static_cast<Eigen::Index>(b),
                                static_cast<Eigen::Index>(f));
  Eigen::Map<const Eigen::VectorXd> target(agg.data(), static_cast<Eigen::Index>(f));

  if (g.isZero(0.0)) {
    const uint8_t majority =
        std::count(true_labels.begin(), true_labels.end(), uint8_t{1}) * 2 > static_cast<std::ptrdiff_t>(b) ? 1 : 0;
    out.labels.assign(b, majority);
    r.degenerate = true;
    r.accuracy = r.majority_rate;
    r.residual = target.norm();
    return out;
  }

  Eigen::MatrixXd gram = g * g.transpose();
  gram.diagonal().array() += kAttackRidge;
  const Eigen::VectorXd a = gram.ldlt().solve(g * target);
  r.residual = (g.transpose() * a - target).norm();

  out.labels.resize(b);
  size_t correct = 0;
  for (size_t i = 0; i < b; ++i) {
    const double v = std::round(probs[i] - a(static_cast<Eigen::Index>(i)));
    out.labels[i] = v >= 1.0 ? 1 : 0;
    correct += out.labels[i] == true_labels[i];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(b);
  return out;
}

namespace {

AdaptedModel sweep_model(const LeakageSweepConfig& cfg) {
  AdaptedModel model(make_base_model(cfg.input_dim, cfg.hidden, mix_seed(cfg.seed, 1)));
  model.freeze();
  AdapterSpec spec;
  spec.rank = cfg.rank;
  spec.seed = mix_seed(cfg.seed, 2);
  spec.up_init_stddev = cfg.up_init_stddev;
  spec.layers = cfg.adapter_layers;
  if (spec.layers.empty()) {
    spec.layers.resize(model.base().layers.size());
    std::iota(spec.layers.begin(), spec.layers.end(), size_t{0});
  }
  model.add_adapter("audit", spec);
  return model;
}

}  // namespace

size_t sweep_param_count(const LeakageSweepConfig& cfg) {
  return sweep_model(cfg).layout("audit").param_count;
}

std::vector<size_t> default_batch_grid(size_t f) {
  std::vector<size_t> grid;
  for (size_t div : {8, 4, 2}) {
    if (f / div >= 1) grid.push_back(f / div);
  }
  for (size_t mul : {1, 2, 4, 8}) grid.push_back(f * mul);
  return grid;
}

std::vector<LeakageRow> leakage_sweep(const LeakageSweepConfig& cfg) {
  if (!(cfg.positive_rate > 0.0 && cfg.positive_rate < 1.0)) {
    throw std::invalid_argument("leakage_sweep: positive_rate must lie in (0, 1)");
  }
  const AdaptedModel model = sweep_model(cfg);
  const std::vector<size_t> batch_sizes =
      cfg.batch_sizes.empty() ? default_batch_grid(model.layout("audit").param_count)
                              : cfg.batch_sizes;

  std::vector<LeakageRow> rows;
  uint64_t trial = 0;
  for (double eps : cfg.epsilons) {
    const double q = eps > 0.0 ? keep_prob(eps) : 1.0;
    for (size_t b : batch_sizes) {
      for (size_t rep = 0; rep < cfg.repeats; ++rep, ++trial) {
        std::mt19937_64 rng(mix_seed(cfg.seed, 0x6175646974 + trial));
        std::normal_distribution<double> normal;
        std::bernoulli_distribution coin(cfg.positive_rate);
        DenseMatrix x(b, cfg.input_dim);
        for (double& v : x.values()) v = normal(rng);
        std::vector<uint8_t> y(b);
        for (auto& v : y) v = coin(rng) ? 1 : 0;
        const std::vector<uint8_t> seen =
            q < 1.0 ? flip_labels(y, q, mix_seed(cfg.seed, 0x666c6970 + trial)).labels : y;

        const auto logits = forward(model, "audit", x);
        const PerSampleGrads grads = per_sample_grads(model, "audit", x);
        Codec codec = cfg.codec;
        codec.seed = mix_seed(cfg.seed, 0x636f646563 + trial);
        const BatchResult agg =
            cleanroom_compute(seen, logits, encode(grads, codec), LossMode::plain());

        std::vector<double> probs(b);
        std::transform(logits.begin(), logits.end(), probs.begin(), sigmoid);
        LeakageRow row;
        row.codec = codec_name(cfg.codec);
        row.epsilon = eps;
        row.repeat = rep;
        row.report = recover_labels(grads, agg.gradient, probs, y).report;
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string leakage_csv(std::span<const LeakageRow> rows) {
  std::string out = "b,param_count,codec,epsilon,accuracy,residual\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{:.6f},{:.6g}\n", r.report.batch_size,
                       r.report.param_count, r.codec, r.epsilon, r.report.accuracy,
                       r.report.residual);
  }
  return out;
}

}  // namespace cvr
