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

#ifndef CVR_METRICS_H_
#define CVR_METRICS_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvr/data.h"
#include "cvr/model.h"

namespace cvr {

// Mann-Whitney AUC with averaged ranks for ties. Throws std::invalid_argument
// if only one class is present.
double roc_auc(std::span<const double> scores, std::span<const uint8_t> labels);

// mean(p) / base_rate. base_rate must lie in (0, 1].
double calibration_ratio(std::span<const double> probs, double base_rate);

// Mean binary cross-entropy, probabilities clamped away from {0, 1}.
double log_loss(std::span<const double> probs, std::span<const uint8_t> labels);

struct EvalReport {
  size_t n = 0;
  double base_rate = 0.0;
  double auc = 0.0;
  double calibration_ratio = 0.0;
  double log_loss = 0.0;
  double mean_prob = 0.0;
};

EvalReport evaluate_probs(std::span<const double> probs, std::span<const uint8_t> labels);

// Scores a labelled dataset through the base (nullopt) or an adapter.
EvalReport evaluate(const AdaptedModel& model, const std::optional<std::string>& adapter_id,
                    const Dataset& data);

}  // namespace cvr

#endif  // CVR_METRICS_H_
