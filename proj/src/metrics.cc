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

#include "cvr/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cvr/privacy.h"

namespace cvr {

double roc_auc(std::span<const double> scores, std::span<const uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  size_t n_pos = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw std::invalid_argument("roc_auc: undefined with a single class");
  }
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double calibration_ratio(std::span<const double> probs, double base_rate) {
  if (!(base_rate > 0.0 && base_rate <= 1.0)) {
    throw std::invalid_argument("calibration_ratio: base_rate must lie in (0, 1]");
  }
  if (probs.empty()) throw std::invalid_argument("calibration_ratio: no predictions");
  const double mean = std::accumulate(probs.begin(), probs.end(), 0.0) /
                      static_cast<double>(probs.size());
  return mean / base_rate;
}

double log_loss(std::span<const double> probs, std::span<const uint8_t> labels) {
  if (probs.size() != labels.size()) throw std::invalid_argument("log_loss: length mismatch");
  if (probs.empty()) throw std::invalid_argument("log_loss: no predictions");
  double sum = 0.0;
  for (size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kProbClamp, 1.0 - kProbClamp);
    sum -= labels[i] ? std::log(p) : std::log1p(-p);
  }
  return sum / static_cast<double>(probs.size());
}

EvalReport evaluate_probs(std::span<const double> probs, std::span<const uint8_t> labels) {
  EvalReport r;
  r.n = probs.size();
  size_t pos = 0;
  for (uint8_t y : labels) pos += y;
  r.base_rate = labels.empty() ? 0.0 : static_cast<double>(pos) / static_cast<double>(labels.size());
  r.auc = roc_auc(probs, labels);
  r.calibration_ratio = calibration_ratio(probs, r.base_rate);
  r.log_loss = log_loss(probs, labels);
  r.mean_prob = r.calibration_ratio * r.base_rate;
  return r;
}

EvalReport evaluate(const AdaptedModel& model, const std::optional<std::string>& adapter_id,
                    const Dataset& data) {
  if (!data.has_labels()) throw std::invalid_argument("evaluate: dataset has no labels");
  const auto logits = adapter_id ? forward(model, *adapter_id, data.features)
                                 : forward(model.base(), data.features);
  std::vector<double> probs(logits.size());
  std::transform(logits.begin(), logits.end(), probs.begin(), sigmoid);
  return evaluate_probs(probs, data.labels);
}

}  // namespace cvr
