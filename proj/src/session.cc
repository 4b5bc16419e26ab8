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

#include "cvr/session.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <unordered_set>

#include "cvr/common.h"
#include "cvr/privacy.h"

namespace cvr {
namespace {

void send_from_cleanroom(Transport& t, const CleanRoomMessage& m, ServeReport& report) {
  const auto frame = encode_message(m);
  report.bytes_out += frame.size();
  t.send(frame);
}

std::string mismatch(const char* field, const std::string& want, const std::string& got) {
  return std::string(field) + " mismatch: clean room expects " + want + ", got " + got;
}

std::string dp_text(const PrivacyBudget& dp) {
  return dp.mode == DpMode::kOff ? "off" : "label_dp(eps=" + std::to_string(dp.epsilon) + ")";
}

}  // namespace

LabelStore LabelStore::from_csv(const std::filesystem::path& path) {
  LabelStore store;
  for (const auto& [id, y] : load_labels_csv(path)) store.labels_.emplace(id, y);
  return store;
}

LabelStore LabelStore::from_pairs(std::span<const uint64_t> ids,
                                  std::span<const uint8_t> labels) {
  if (ids.size() != labels.size()) throw std::invalid_argument("LabelStore: length mismatch");
  LabelStore store;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] > 1) throw std::invalid_argument("LabelStore: labels must be 0 or 1");
    if (!store.labels_.emplace(ids[i], labels[i]).second) {
      throw std::invalid_argument("LabelStore: duplicate sample_id " + std::to_string(ids[i]));
    }
  }
  return store;
}

void LabelStore::apply_label_dp(double keep_prob, uint64_t seed) {
  // Re-flipping would let repeated draws average the noise away.
  if (dp_applied_) throw std::logic_error("label DP already applied to this store");
  dp_applied_ = true;
  std::vector<uint64_t> ids;
  ids.reserve(labels_.size());
  for (const auto& [id, _] : labels_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::vector<uint8_t> ys;
  ys.reserve(ids.size());
  for (uint64_t id : ids) ys.push_back(labels_[id]);
  const FlippedLabels flipped = flip_labels(ys, keep_prob, seed);
  flipped_ = 0;
  for (size_t i = 0; i < ids.size(); ++i) {
    labels_[ids[i]] = flipped.labels[i];
    flipped_ += flipped.flip_mask[i];
  }
}

std::optional<uint8_t> LabelStore::find(uint64_t id) const {
  auto it = labels_.find(id);
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

std::string check_session(const ServerConfig& server, const SessionConfig& c) {
  if (c.protocol_version != kProtocolVersion) {
    return "protocol version " + std::to_string(c.protocol_version) + " unsupported";
  }
  if (c.batch_size == 0) return "batch_size must be positive";
  if (c.param_count == 0) return "param_count must be positive";
  if (c.codec.kind == CodecKind::kQsgd && (c.codec.bits < 2 || c.codec.bits > 8)) {
    return "qsgd bits out of range";
  }
  if (server.batch_size && *server.batch_size != c.batch_size) {
    return mismatch("batch_size", std::to_string(*server.batch_size), std::to_string(c.batch_size));
  }
  if (server.param_count && *server.param_count != c.param_count) {
    return mismatch("param_count", std::to_string(*server.param_count),
                    std::to_string(c.param_count));
  }
  if (server.codec && !server.codec->same_format(c.codec)) {
    return mismatch("codec", codec_name(*server.codec), codec_name(c.codec));
  }
  if (server.model_signature && *server.model_signature != c.model_signature) {
    return mismatch("model_signature", to_hex(*server.model_signature), to_hex(c.model_signature));
  }
  if (server.dp.mode != c.dp.mode ||
      (server.dp.mode == DpMode::kLabelDp && server.dp.epsilon != c.dp.epsilon)) {
    return mismatch("dp", dp_text(server.dp), dp_text(c.dp));
  }
  if (server.debias != c.debias) {
    return mismatch("debias", server.debias ? "on" : "off", c.debias ? "on" : "off");
  }
  if (c.report_loss && !server.allow_loss_report) return "loss reporting not allowed";
  return {};
}

std::vector<double> aggregate_gradient(const DenseMatrix& g, std::span<const double> w) {
  if (w.size() != g.rows()) throw std::invalid_argument("aggregate_gradient: length mismatch");
  std::vector<double> out(g.cols(), 0.0);
  for (size_t i = 0; i < g.rows(); ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    auto row = g.row(i);
    for (size_t j = 0; j < row.size(); ++j) out[j] += wi * row[j];
  }
  return out;
}

BatchResult cleanroom_compute(std::span<const uint8_t> labels,
                              std::span<const double> logits,
                              const CompressedGrads& grads, const LossMode& mode) {
  const PerSampleGrads g = decode(grads);
  if (g.batch_size() != labels.size()) {
    throw std::invalid_argument("cleanroom_compute: gradient rows != labels");
  }
  const auto dldz = loss_grad_wrt_logit(logits, labels, mode);
  return {aggregate_gradient(g.g, dldz), loss(logits, labels, mode)};
}

ServeReport cleanroom_serve(const LabelStore& labels, const ServerConfig& cfg,
                            Transport& transport) {
  ServeReport report;
  SessionConfig session;
  auto next = [&]() -> std::optional<WireMessage> {
    std::vector<uint8_t> frame;
    try {
      frame = transport.receive();
    } catch (const TransportClosed&) {
      return std::nullopt;
    }
    report.bytes_in += frame.size();
    return decode_message(frame);
  };

  try {
    auto first = next();
    if (!first) return report;
    const auto* hello = std::get_if<Hello>(&*first);
    if (hello == nullptr) {
      send_from_cleanroom(transport,
                          ErrorMessage{ErrorCode::kUnexpectedMessage, "expected Hello"},
                          report);
      return report;
    }
    session = hello->config;
    const std::string reason = check_session(cfg, session);
    if (!reason.empty()) {
      report.reject_reason = reason;
      spdlog::warn("clean room: rejecting session: {}", reason);
      send_from_cleanroom(transport, HelloAck{false, reason}, report);
      return report;
    }
    report.accepted = true;
    send_from_cleanroom(transport, HelloAck{true, {}}, report);
  } catch (const ProtocolError& e) {
    send_from_cleanroom(transport, ErrorMessage{ErrorCode::kMalformed, e.what()}, report);
    return report;
  }

  const LossMode mode = session.loss_mode();
  for (;;) {
    std::optional<WireMessage> msg;
    try {
      msg = next();
    } catch (const ProtocolError& e) {
      send_from_cleanroom(transport, ErrorMessage{ErrorCode::kMalformed, e.what()}, report);
      return report;
    }
    if (!msg || std::holds_alternative<EndSession>(*msg)) break;
    auto* batch = std::get_if<ForwardBatch>(&*msg);
    if (batch == nullptr) {
      send_from_cleanroom(transport,
                          ErrorMessage{ErrorCode::kUnexpectedMessage, "expected ForwardBatch"},
                          report);
      break;
    }
    auto fail = [&](ErrorCode code, const std::string& text) {
      ++report.batch_errors;
      spdlog::warn("clean room: batch {} aborted: {}", batch->batch_id, text);
      send_from_cleanroom(transport, ErrorMessage{code, text}, report);
    };
    if (batch->sample_ids.size() != session.batch_size ||
        batch->grads.param_count != session.param_count) {
      fail(ErrorCode::kBatchShape, "batch shape does not match session");
      continue;
    }
    if (!session.codec.same_format(Codec{batch->grads.codec, batch->grads.bits, 0}) ||
        batch->wide != session.wide_wire) {
      fail(ErrorCode::kCodecMismatch, "batch encoding does not match session");
      continue;
    }
    std::vector<uint8_t> ys;
    ys.reserve(batch->sample_ids.size());
    std::unordered_set<uint64_t> seen;
    std::string join_error;
    for (uint64_t id : batch->sample_ids) {
      if (!seen.insert(id).second) {
        join_error = "duplicate sample_id " + std::to_string(id);
        break;
      }
      auto y = labels.find(id);
      if (!y) {
        join_error = "unknown sample_id " + std::to_string(id);
        break;
      }
      ys.push_back(*y);
    }
    if (!join_error.empty()) {
      fail(ErrorCode::kUnknownSample, join_error);
      continue;
    }
    BatchResult result;
    try {
      result = cleanroom_compute(ys, batch->logits, batch->grads, mode);
    } catch (const std::exception& e) {
      fail(ErrorCode::kMalformed, e.what());
      continue;
    }
    AggGrad reply;
    reply.batch_id = batch->batch_id;
    reply.gradient = std::move(result.gradient);
    reply.wide = session.wide_wire;
    if (session.report_loss) reply.loss_sum = result.loss_sum;
    send_from_cleanroom(transport, reply, report);
    ++report.batches;
  }
  return report;
}

FeaturePartyClient::FeaturePartyClient(Transport& transport, SessionConfig config)
    : transport_(transport), config_(std::move(config)) {}

std::vector<uint8_t> FeaturePartyClient::receive() {
  auto frame = transport_.receive();
  report_.bytes_down += frame.size();
  return frame;
}

void FeaturePartyClient::open() {
  const auto hello = encode_message(WireMessage{Hello{config_}});
  transport_.send(hello);
  report_.bytes_up += hello.size();
  report_.handshake_up += hello.size();
  const auto frame = receive();
  report_.handshake_down += frame.size();
  const WireMessage reply = decode_message(frame);
  if (const auto* err = std::get_if<ErrorMessage>(&reply)) {
    throw RemoteError(err->code, err->text);
  }
  const auto* ack = std::get_if<HelloAck>(&reply);
  if (ack == nullptr) throw ProtocolError("expected HelloAck");
  if (!ack->accepted) throw SessionRejected("session rejected: " + ack->reason);
  open_ = true;
}

StepResult FeaturePartyClient::exchange(uint64_t batch_id,
                                        std::span<const uint64_t> sample_ids,
                                        std::span<const double> logits,
                                        const PerSampleGrads& grads) {
  if (!open_) throw std::logic_error("exchange: session not open");
  Codec codec = config_.codec;
  codec.seed = mix_seed(config_.session_seed, batch_id);
  ForwardBatch fb;
  fb.batch_id = batch_id;
  fb.sample_ids.assign(sample_ids.begin(), sample_ids.end());
  fb.logits.assign(logits.begin(), logits.end());
  fb.wide = config_.wide_wire;
  fb.grads = encode(grads, codec);

  BatchTraffic traffic;
  traffic.batch_id = batch_id;
  traffic.grad_payload_bytes = fb.grads.payload.size();
  const auto frame = encode_message(WireMessage{std::move(fb)});
  transport_.send(frame);
  traffic.bytes_up = frame.size();
  report_.bytes_up += frame.size();

  const auto reply_frame = receive();
  traffic.bytes_down = reply_frame.size();
  report_.per_batch.push_back(traffic);
  next_batch_id_ = batch_id + 1;

  WireMessage reply = decode_message(reply_frame);
  if (const auto* err = std::get_if<ErrorMessage>(&reply)) {
    throw RemoteError(err->code, "clean room error: " + err->text);
  }
  auto* agg = std::get_if<AggGrad>(&reply);
  if (agg == nullptr) throw ProtocolError("expected AggGrad");
  if (agg->batch_id != batch_id) {
    throw ProtocolError("batch_id mismatch: sent " + std::to_string(batch_id) + ", got " +
                        std::to_string(agg->batch_id));
  }
  if (agg->gradient.size() != config_.param_count) {
    throw ProtocolError("AggGrad length != param_count");
  }
  return {std::move(agg->gradient), agg->loss_sum};
}

void FeaturePartyClient::close() {
  if (!open_) return;
  const auto frame = encode_message(WireMessage{EndSession{}});
  try {
    transport_.send(frame);
    report_.bytes_up += frame.size();
    report_.handshake_up += frame.size();
  } catch (const TransportClosed&) {
  }
  open_ = false;
}

StepResult featureparty_step(FeaturePartyClient& client, const AdaptedModel& model,
                             std::string_view adapter_id, const Batch& batch) {
  const auto logits = forward(model, adapter_id, batch.features);
  const PerSampleGrads g = per_sample_grads(model, adapter_id, batch.features);
  return client.exchange(client.next_batch_id(), batch.sample_ids, logits, g);
}

CommReport comm_report(const FeaturePartyClient& client) { return client.comm_report(); }

}  // namespace cvr
