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

// Label differential privacy by randomized response, and the clean-room loss.
//
// With keep probability q = e^eps / (e^eps + 1), each label is kept with
// probability q and flipped otherwise. A model trained on flipped labels is
// de-biased by scoring the loss at p' = p q + (1 - p)(1 - q), the expected
// positive rate after flipping.

#ifndef CVR_PRIVACY_H_
#define CVR_PRIVACY_H_

#include <cstdint>
#include <span>
#include <vector>

namespace cvr {

enum class DpMode : uint8_t { kOff = 0, kLabelDp = 1 };

struct PrivacyBudget {
  DpMode mode = DpMode::kOff;
  double epsilon = 0.0;

  static PrivacyBudget off() { return {}; }
  static PrivacyBudget label_dp(double epsilon);

  // 1 when off.
  double keep_prob() const;

  friend bool operator==(const PrivacyBudget&, const PrivacyBudget&) = default;
};

struct FlippedLabels {
  std::vector<uint8_t> labels;
  std::vector<uint8_t> flip_mask;
  uint64_t seed = 0;
};

enum class Reduction : uint8_t { kSum = 0, kMean = 1 };

struct LossMode {
  bool debiased = false;
  double keep_prob = 1.0;  // only read when debiased
  Reduction reduction = Reduction::kSum;

  static LossMode plain(Reduction r = Reduction::kSum) { return {false, 1.0, r}; }
  static LossMode debias(double q, Reduction r = Reduction::kSum);
};

// Clamp applied to p before taking logs on the plain path.
inline constexpr double kProbClamp = 1e-7;

double keep_prob(double epsilon);

FlippedLabels flip_labels(std::span<const uint8_t> labels, double keep_prob,
                          uint64_t seed);

double debias_prob(double p, double keep_prob);

double sigmoid(double z);

double loss(std::span<const double> logits, std::span<const uint8_t> labels,
            const LossMode& mode);

// dL/dz_i for each sample.
std::vector<double> loss_grad_wrt_logit(std::span<const double> logits,
                                        std::span<const uint8_t> labels,
                                        const LossMode& mode);

}  // namespace cvr

#endif  // CVR_PRIVACY_H_
