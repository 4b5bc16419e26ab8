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

#ifndef CVR_TRAINING_H_
#define CVR_TRAINING_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvr/data.h"
#include "cvr/model.h"
#include "cvr/privacy.h"
#include "cvr/session.h"

namespace cvr {

enum class OptimizerKind : uint8_t { kSgd = 0, kAdam = 1 };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.01;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Divide lr by the batch size, so sum-reduced losses take batch-size
  // independent steps.
  bool scale_lr_by_batch = false;

  void validate() const;
};

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, size_t param_count);
  // Parameter delta for one step.
  std::vector<double> step(std::span<const double> grad, size_t batch_size);

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  uint64_t t_ = 0;
};

struct TrainOptions {
  size_t batch_size = 256;
  size_t epochs = 1;
  uint64_t shuffle_seed = 0;
  size_t max_steps = 0;  // 0 = no limit
  bool record_loss = false;
  // Keeps the parameter vector after every step (equivalence tests).
  bool record_trajectory = false;
};

struct TrainReport {
  uint64_t steps = 0;
  uint64_t epochs = 0;
  uint64_t param_count = 0;
  uint64_t batch_size = 0;
  uint64_t bytes_up = 0;
  uint64_t bytes_down = 0;
  double wall_time_s = 0.0;
  std::vector<double> loss_curve;
  std::string final_checksum;
  bool completed = true;
  std::string error;
  CommReport comm;
  std::vector<std::vector<double>> trajectory;
};

// Session-level choices for split training; batch size, param count and the
// model signature are filled in from the model and options.
struct SplitTrainConfig {
  Codec codec;
  PrivacyBudget dp;
  bool debias = false;
  Reduction reduction = Reduction::kSum;
  bool report_loss = false;
  bool wide_wire = false;
  uint64_t session_seed = 0;
  OptimizerConfig optimizer;
  TrainOptions options;
};

SessionConfig make_session_config(const AdaptedModel& model, std::string_view adapter_id,
                                  const SplitTrainConfig& cfg);

// Feature-party side of split fine-tuning. `data` needs ids and features only.
// Transport failures end the run early with completed = false.
TrainReport split_train(AdaptedModel& model, const std::string& adapter_id,
                        const Dataset& data, const SplitTrainConfig& cfg,
                        Transport& transport);

struct Trainable {
  std::optional<std::string> adapter_id;  // nullopt = all base parameters

  static Trainable adapter(std::string id) { return {std::move(id)}; }
  static Trainable all_params() { return {}; }
};

struct LocalGradient {
  std::vector<double> gradient;
  double loss = 0.0;
};

// Loss and gradient of one labelled batch. Oracle path: it sees labels.
LocalGradient local_gradient(const AdaptedModel& model, const Trainable& trainable,
                             const Batch& batch, const LossMode& mode);

// Monolithic trainer with local labels: the split oracle and the full
// fine-tune baseline. all_params requires an unfrozen base.
TrainReport local_train(AdaptedModel& model, const Trainable& trainable,
                        const Dataset& data, const OptimizerConfig& optimizer,
                        const LossMode& mode, const TrainOptions& options);

struct PretrainConfig {
  std::vector<size_t> hidden = {64, 32};
  uint64_t seed = 0;
  OptimizerConfig optimizer;
  TrainOptions options;
};

// Trains a fresh base on labelled pretraining data and freezes it.
BaseModel pretrain(const PretrainConfig& cfg, const Dataset& data,
                   TrainReport* report = nullptr);

std::string params_checksum(const AdaptedModel& model, const Trainable& trainable);

// JSON form of a report. Without timing the text is a pure function of the
// seeds and inputs, so two runs can be compared byte for byte.
std::string to_json(const TrainReport& report, bool include_timing = true);

}  // namespace cvr

#endif  // CVR_TRAINING_H_
