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

// Label-leakage attack on the aggregated gradient.
//
// The feature party knows G and p for its batch and receives
// agg = G^T (p - y). When the system is determined (param_count >= b) it can
// solve for a = p - y and read the labels off; aggregation only protects
// labels once b outgrows the parameter count.

#ifndef CVR_AUDIT_H_
#define CVR_AUDIT_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvr/compression.h"
#include "cvr/model.h"

namespace cvr {

enum class LeakageRegime : uint8_t { kDetermined = 0, kUnderdetermined = 1 };

std::string_view regime_name(LeakageRegime r);

struct LeakageReport {
  size_t batch_size = 0;
  size_t param_count = 0;
  double accuracy = 0.0;  // against the true (pre-flip) labels
  double residual = 0.0;  // ||G^T a - agg||
  double majority_rate = 0.0;
  LeakageRegime regime = LeakageRegime::kDetermined;
  bool degenerate = false;  // G was all zeros
};

struct RecoveredLabels {
  std::vector<uint8_t> labels;
  LeakageReport report;
};

inline constexpr double kAttackRidge = 1e-8;

// min_a ||G^T a - agg||^2 + ridge ||a||^2, then y_i = clamp(round(p_i - a_i)).
RecoveredLabels recover_labels(const PerSampleGrads& grads, std::span<const double> agg,
                               std::span<const double> probs,
                               std::span<const uint8_t> true_labels);

struct LeakageSweepConfig {
  size_t input_dim = 16;
  std::vector<size_t> hidden = {32, 16};
  size_t rank = 1;
  std::vector<size_t> adapter_layers;  // empty = every layer
  // A trained adapter has B != 0; a fresh one would zero most of G.
  double up_init_stddev = 0.5;
  std::vector<size_t> batch_sizes;  // empty = default_batch_grid
  size_t repeats = 3;
  Codec codec;
  std::vector<double> epsilons = {0.0};  // 0 = label DP off
  // Labels are i.i.d. Bernoulli(positive_rate) so the majority baseline is
  // informative; 0.5 makes guessing worthless.
  double positive_rate = 0.5;
  uint64_t seed = 0;
};

struct LeakageRow {
  std::string codec;
  double epsilon = 0.0;
  size_t repeat = 0;
  LeakageReport report;
};

// Adapter parameter count for the sweep's model.
size_t sweep_param_count(const LeakageSweepConfig& cfg);

// f/8, f/4, f/2, f, 2f, 4f, 8f (entries below 1 dropped).
std::vector<size_t> default_batch_grid(size_t param_count);

// The aggregate goes through the real clean-room path (encode, decode,
// join, G^T w); the attacker uses its exact G.
std::vector<LeakageRow> leakage_sweep(const LeakageSweepConfig& cfg);

// "b,param_count,codec,epsilon,accuracy,residual"
std::string leakage_csv(std::span<const LeakageRow> rows);

}  // namespace cvr

#endif  // CVR_AUDIT_H_
