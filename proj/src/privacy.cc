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

#include "cvr/privacy.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "cvr/common.h"

namespace cvr {
namespace {

void check_keep_prob(double q, const char* where) {
  if (!(q > 0.5 && q <= 1.0)) {
    throw std::invalid_argument(std::string(where) +
                                ": keep probability must lie in (0.5, 1], got " +
                                std::to_string(q));
  }
}

void check_pair(std::span<const double> logits, std::span<const uint8_t> labels) {
  if (logits.size() != labels.size()) {
    throw std::invalid_argument("loss: " + std::to_string(logits.size()) +
                                " logits vs " + std::to_string(labels.size()) +
                                " labels");
  }
  for (uint8_t y : labels) {
    if (y > 1) throw std::invalid_argument("loss: labels must be 0 or 1");
  }
}

// Probability pair (p, 1 - p) without cancellation at large |z|.
struct Probs {
  double pos;
  double neg;
};

Probs probs_of(double z) { return {sigmoid(z), sigmoid(-z)}; }

}  // namespace

PrivacyBudget PrivacyBudget::label_dp(double epsilon) {
  cvr::keep_prob(epsilon);  // validates
  return {DpMode::kLabelDp, epsilon};
}

double PrivacyBudget::keep_prob() const {
  return mode == DpMode::kOff ? 1.0 : cvr::keep_prob(epsilon);
}

LossMode LossMode::debias(double q, Reduction r) {
  check_keep_prob(q, "LossMode::debias");
  return {true, q, r};
}

double keep_prob(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("keep_prob: epsilon must be positive and finite");
  }
  // e^eps / (e^eps + 1) == 1 / (1 + e^-eps)
  return 1.0 / (1.0 + std::exp(-epsilon));
}

FlippedLabels flip_labels(std::span<const uint8_t> labels, double keep_prob,
                          uint64_t seed) {
  check_keep_prob(keep_prob, "flip_labels");
  FlippedLabels out;
  out.seed = seed;
  out.labels.resize(labels.size());
  out.flip_mask.assign(labels.size(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x666c6970ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw std::invalid_argument("flip_labels: labels must be 0 or 1");
    // Draw for every label so the stream does not depend on q == 1.
    const bool flip = u(rng) >= keep_prob;
    out.flip_mask[i] = flip ? 1 : 0;
    out.labels[i] = labels[i] ^ out.flip_mask[i];
  }
  return out;
}

double debias_prob(double p, double keep_prob) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("debias_prob: p must lie in [0, 1]");
  }
  check_keep_prob(keep_prob, "debias_prob");
  return p * keep_prob + (1.0 - p) * (1.0 - keep_prob);
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double loss(std::span<const double> logits, std::span<const uint8_t> labels,
            const LossMode& mode) {
  check_pair(logits, labels);
  const bool debiased = mode.debiased && mode.keep_prob < 1.0;
  if (mode.debiased) check_keep_prob(mode.keep_prob, "loss");
  const double q = mode.keep_prob;
  double total = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const Probs pr = probs_of(logits[i]);
    double pos, neg;
    if (debiased) {
      // p~ and 1 - p~ both stay in [1 - q, q].
      pos = q * pr.pos + (1.0 - q) * pr.neg;
      neg = q * pr.neg + (1.0 - q) * pr.pos;
    } else {
      pos = std::clamp(pr.pos, kProbClamp, 1.0 - kProbClamp);
      neg = std::clamp(pr.neg, kProbClamp, 1.0 - kProbClamp);
    }
    total -= labels[i] ? std::log(pos) : std::log(neg);
  }
  if (mode.reduction == Reduction::kMean && !logits.empty()) {
    total /= static_cast<double>(logits.size());
  }
  return total;
}

std::vector<double> loss_grad_wrt_logit(std::span<const double> logits,
                                        std::span<const uint8_t> labels,
                                        const LossMode& mode) {
  check_pair(logits, labels);
  const bool debiased = mode.debiased && mode.keep_prob < 1.0;
  if (mode.debiased) check_keep_prob(mode.keep_prob, "loss_grad_wrt_logit");
  const double q = mode.keep_prob;
  const double scale = mode.reduction == Reduction::kMean && !logits.empty()
                           ? 1.0 / static_cast<double>(logits.size())
                           : 1.0;
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    const Probs pr = probs_of(logits[i]);
    double g;
    if (debiased) {
      const double pos = q * pr.pos + (1.0 - q) * pr.neg;
      const double neg = q * pr.neg + (1.0 - q) * pr.pos;
      const double dp = (2.0 * q - 1.0) * pr.pos * pr.neg;
      // d/dp~ of -log(p~) or -log(1 - p~)
      g = labels[i] ? -dp / pos : dp / neg;
    } else {
      g = labels[i] ? -pr.neg : pr.pos;
    }
    out[i] = g * scale;
  }
  return out;
}

}  // namespace cvr
