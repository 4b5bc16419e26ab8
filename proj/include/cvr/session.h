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

// One training session between the feature party and the clean room.
//
// Per batch the feature party sends logits and the (encoded) per-sample
// gradient matrix G; the clean room joins labels by sample_id, computes
// dL/dz element-wise and answers with the single vector G^T (dL/dz).

#ifndef CVR_SESSION_H_
#define CVR_SESSION_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvr/data.h"
#include "cvr/model.h"
#include "cvr/transport.h"
#include "cvr/wire.h"

namespace cvr {

class SessionRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RemoteError : public std::runtime_error {
 public:
  RemoteError(ErrorCode code, const std::string& text)
      : std::runtime_error(text), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Labels held by the clean room, keyed by sample_id.
class LabelStore {
 public:
  static LabelStore from_csv(const std::filesystem::path& path);
  static LabelStore from_pairs(std::span<const uint64_t> ids,
                               std::span<const uint8_t> labels);

  // Randomized response applied once at ingestion, in ascending id order.
  // A second call throws std::logic_error.
  void apply_label_dp(double keep_prob, uint64_t seed);

  std::optional<uint8_t> find(uint64_t id) const;
  size_t size() const { return labels_.size(); }
  size_t flipped() const { return flipped_; }

 private:
  std::unordered_map<uint64_t, uint8_t> labels_;
  size_t flipped_ = 0;
  bool dp_applied_ = false;
};

// What the clean room enforces on an incoming Hello. Privacy settings are the
// label owner's and must match exactly; the pins are optional.
struct ServerConfig {
  PrivacyBudget dp;
  bool debias = false;
  std::optional<uint32_t> batch_size;
  std::optional<uint32_t> param_count;
  std::optional<Codec> codec;
  std::optional<std::array<uint8_t, 32>> model_signature;
  bool allow_loss_report = true;
};

// Empty when accepted.
std::string check_session(const ServerConfig& server, const SessionConfig& hello);

struct ServeReport {
  bool accepted = false;
  std::string reject_reason;
  uint64_t batches = 0;
  uint64_t batch_errors = 0;
  uint64_t bytes_in = 0;
  uint64_t bytes_out = 0;
};

// G^T w, accumulated in double.
std::vector<double> aggregate_gradient(const DenseMatrix& g, std::span<const double> w);

// Clean-room arithmetic for one batch: join, dL/dz, one matrix-vector product.
struct BatchResult {
  std::vector<double> gradient;
  double loss_sum = 0.0;
};
BatchResult cleanroom_compute(std::span<const uint8_t> labels,
                              std::span<const double> logits,
                              const CompressedGrads& grads, const LossMode& mode);

// Serves one session until EndSession or the transport closes.
ServeReport cleanroom_serve(const LabelStore& labels, const ServerConfig& cfg,
                            Transport& transport);

struct BatchTraffic {
  uint64_t batch_id = 0;
  uint64_t bytes_up = 0;
  uint64_t bytes_down = 0;
  uint64_t grad_payload_bytes = 0;
};

struct CommReport {
  uint64_t bytes_up = 0;
  uint64_t bytes_down = 0;
  uint64_t handshake_up = 0;
  uint64_t handshake_down = 0;
  std::vector<BatchTraffic> per_batch;
};

struct StepResult {
  std::vector<double> gradient;
  std::optional<double> loss_sum;
};

class FeaturePartyClient {
 public:
  FeaturePartyClient(Transport& transport, SessionConfig config);

  // Sends Hello; throws SessionRejected with the clean room's reason.
  void open();
  StepResult exchange(uint64_t batch_id, std::span<const uint64_t> sample_ids,
                      std::span<const double> logits, const PerSampleGrads& grads);
  void close();

  const SessionConfig& config() const { return config_; }
  const CommReport& comm_report() const { return report_; }
  uint64_t next_batch_id() const { return next_batch_id_; }

 private:
  std::vector<uint8_t> receive();

  Transport& transport_;
  SessionConfig config_;
  CommReport report_;
  bool open_ = false;
  uint64_t next_batch_id_ = 0;
};

// Forward, per-sample gradients, encode, send, await the aggregate.
StepResult featureparty_step(FeaturePartyClient& client, const AdaptedModel& model,
                             std::string_view adapter_id, const Batch& batch);

CommReport comm_report(const FeaturePartyClient& client);

}  // namespace cvr

#endif  // CVR_SESSION_H_
