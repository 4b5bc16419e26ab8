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

#include "cvr/training.h"

#include <spdlog/spdlog.h>

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "cvr/common.h"

namespace cvr {
namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<double> current_params(const AdaptedModel& model, const Trainable& t) {
  return t.adapter_id ? model.flatten_params(*t.adapter_id).values
                      : flatten_base(model.base());
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("optimizer: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("optimizer: momentum must lie in [0, 1)");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("optimizer: adam_epsilon must be > 0");
}

Optimizer::Optimizer(const OptimizerConfig& cfg, size_t param_count) : cfg_(cfg) {
  cfg_.validate();
  m_.assign(param_count, 0.0);
  if (cfg_.kind == OptimizerKind::kAdam) v_.assign(param_count, 0.0);
}

std::vector<double> Optimizer::step(std::span<const double> grad, size_t batch_size) {
  if (grad.size() != m_.size()) throw std::invalid_argument("optimizer: gradient length mismatch");
  const double lr = cfg_.scale_lr_by_batch && batch_size > 0
                        ? cfg_.lr / static_cast<double>(batch_size)
                        : cfg_.lr;
  std::vector<double> delta(grad.size());
  ++t_;
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (size_t j = 0; j < grad.size(); ++j) {
      if (cfg_.momentum > 0.0) {
        m_[j] = cfg_.momentum * m_[j] + grad[j];
        delta[j] = -lr * m_[j];
      } else {
        delta[j] = -lr * grad[j];
      }
    }
    return delta;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t j = 0; j < grad.size(); ++j) {
    m_[j] = cfg_.beta1 * m_[j] + (1.0 - cfg_.beta1) * grad[j];
    v_[j] = cfg_.beta2 * v_[j] + (1.0 - cfg_.beta2) * grad[j] * grad[j];
    delta[j] = -lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + cfg_.adam_epsilon);
  }
  return delta;
}

std::string params_checksum(const AdaptedModel& model, const Trainable& trainable) {
  return checksum(current_params(model, trainable));
}

SessionConfig make_session_config(const AdaptedModel& model, std::string_view adapter_id,
                                  const SplitTrainConfig& cfg) {
  const ParamLayout layout = model.layout(adapter_id);
  SessionConfig s;
  s.batch_size = static_cast<uint32_t>(cfg.options.batch_size);
  s.param_count = static_cast<uint32_t>(layout.param_count);
  s.codec = cfg.codec;
  s.codec.seed = 0;
  s.dp = cfg.dp;
  s.debias = cfg.debias;
  s.reduction = cfg.reduction;
  s.report_loss = cfg.report_loss;
  s.wide_wire = cfg.wide_wire;
  s.session_seed = cfg.session_seed;
  s.model_signature = model_signature(layout);
  return s;
}

TrainReport split_train(AdaptedModel& model, const std::string& adapter_id,
                        const Dataset& data, const SplitTrainConfig& cfg,
                        Transport& transport) {
  const auto start = std::chrono::steady_clock::now();
  const SessionConfig session = make_session_config(model, adapter_id, cfg);
  FeaturePartyClient client(transport, session);
  client.open();

  TrainReport report;
  report.param_count = session.param_count;
  report.batch_size = session.batch_size;
  Optimizer opt(cfg.optimizer, session.param_count);
  const TrainOptions& o = cfg.options;
  try {
    for (size_t epoch = 0; epoch < o.epochs; ++epoch) {
      for (const auto& rows : epoch_batches(data.size(), o.batch_size, o.shuffle_seed, epoch)) {
        if (o.max_steps && report.steps >= o.max_steps) break;
        const Batch batch = make_batch(data, rows, /*with_labels=*/false);
        const StepResult step = featureparty_step(client, model, adapter_id, batch);
        model.apply_update(adapter_id, opt.step(step.gradient, batch.sample_ids.size()));
        ++report.steps;
        if (step.loss_sum) report.loss_curve.push_back(*step.loss_sum);
        if (o.record_trajectory) {
          report.trajectory.push_back(model.flatten_params(adapter_id).values);
        }
      }
      ++report.epochs;
      if (o.max_steps && report.steps >= o.max_steps) break;
    }
    client.close();
  } catch (const TransportClosed& e) {
    report.completed = false;
    report.error = e.what();
    spdlog::error("split_train: aborted after {} steps: {}", report.steps, e.what());
  }
  report.comm = client.comm_report();
  report.bytes_up = report.comm.bytes_up;
  report.bytes_down = report.comm.bytes_down;
  report.final_checksum = params_checksum(model, Trainable::adapter(adapter_id));
  report.wall_time_s = seconds_since(start);
  return report;
}

LocalGradient local_gradient(const AdaptedModel& model, const Trainable& trainable,
                             const Batch& batch, const LossMode& mode) {
  if (batch.labels.size() != batch.sample_ids.size()) {
    throw std::invalid_argument("local_gradient: batch carries no labels");
  }
  const auto logits = trainable.adapter_id
                          ? forward(model, *trainable.adapter_id, batch.features)
                          : forward(model.base(), batch.features);
  const auto dldz = loss_grad_wrt_logit(logits, batch.labels, mode);
  LocalGradient out;
  out.loss = loss(logits, batch.labels, mode);
  out.gradient = trainable.adapter_id
                     ? contracted_grad(model, *trainable.adapter_id, batch.features, dldz)
                     : base_contracted_grad(model.base(), batch.features, dldz);
  return out;
}

TrainReport local_train(AdaptedModel& model, const Trainable& trainable,
                        const Dataset& data, const OptimizerConfig& optimizer,
                        const LossMode& mode, const TrainOptions& o) {
  if (!data.has_labels()) throw std::invalid_argument("local_train: dataset has no labels");
  if (!trainable.adapter_id && model.base().frozen) {
    throw std::logic_error("local_train: base is frozen; unfreeze a copy for full training");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.batch_size = o.batch_size;
  report.param_count = trainable.adapter_id ? model.layout(*trainable.adapter_id).param_count
                                            : model.base().param_count();
  Optimizer opt(optimizer, report.param_count);
  for (size_t epoch = 0; epoch < o.epochs; ++epoch) {
    for (const auto& rows : epoch_batches(data.size(), o.batch_size, o.shuffle_seed, epoch)) {
      if (o.max_steps && report.steps >= o.max_steps) break;
      const Batch batch = make_batch(data, rows, /*with_labels=*/true);
      const LocalGradient g = local_gradient(model, trainable, batch, mode);
      const auto delta = opt.step(g.gradient, rows.size());
      if (trainable.adapter_id) {
        model.apply_update(*trainable.adapter_id, delta);
      } else {
        apply_base_update(model.mutable_base(), delta);
      }
      ++report.steps;
      if (o.record_loss) report.loss_curve.push_back(g.loss);
      if (o.record_trajectory) report.trajectory.push_back(current_params(model, trainable));
    }
    ++report.epochs;
    if (o.max_steps && report.steps >= o.max_steps) break;
  }
  report.final_checksum = params_checksum(model, trainable);
  report.wall_time_s = seconds_since(start);
  return report;
}

BaseModel pretrain(const PretrainConfig& cfg, const Dataset& data, TrainReport* report) {
  AdaptedModel model(make_base_model(data.features.cols(), cfg.hidden, cfg.seed));
  TrainReport r = local_train(model, Trainable::all_params(), data, cfg.optimizer,
                              LossMode::plain(), cfg.options);
  if (report) *report = std::move(r);
  BaseModel base = model.base();
  base.frozen = true;
  return base;
}

std::string to_json(const TrainReport& r, bool include_timing) {
  uint64_t grad_payload = 0;
  for (const auto& t : r.comm.per_batch) grad_payload += t.grad_payload_bytes;
  nlohmann::ordered_json j;
  j["steps"] = r.steps;
  j["epochs"] = r.epochs;
  j["param_count"] = r.param_count;
  j["batch_size"] = r.batch_size;
  j["bytes_up"] = r.bytes_up;
  j["bytes_down"] = r.bytes_down;
  j["handshake_up"] = r.comm.handshake_up;
  j["handshake_down"] = r.comm.handshake_down;
  j["grad_payload_bytes"] = grad_payload;
  j["loss_curve"] = r.loss_curve;
  j["final_checksum"] = r.final_checksum;
  j["completed"] = r.completed;
  if (!r.error.empty()) j["error"] = r.error;
  if (include_timing) j["wall_time_s"] = r.wall_time_s;
  return j.dump(2);
}

}  // namespace cvr
