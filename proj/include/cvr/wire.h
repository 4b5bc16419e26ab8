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

// Framed messages exchanged between the feature party and the clean room.
//
// Frame: "CVR1" | version u8 (=1) | type u8 | payload length u32 | payload.
// All integers and floats are little-endian. Payload layouts are listed in
// README.md; they are fixed per message type.

#ifndef CVR_WIRE_H_
#define CVR_WIRE_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cvr/compression.h"
#include "cvr/privacy.h"

namespace cvr {

inline constexpr uint8_t kProtocolVersion = 1;
inline constexpr size_t kFrameHeaderBytes = 10;
inline constexpr uint32_t kMaxPayloadBytes = 1u << 30;
// batch_id + count + logit width + codec header (id, bits, rows, cols, length)
inline constexpr size_t kForwardBatchFixedBytes = 8 + 4 + 1 + 1 + 1 + 4 + 4 + 4;

enum class MessageType : uint8_t {
  kHello = 1,
  kHelloAck = 2,
  kForwardBatch = 3,
  kAggGrad = 4,
  kEndSession = 5,
  kError = 6,
};

enum class ErrorCode : uint32_t {
  kMalformed = 1,
  kUnexpectedMessage = 2,
  kUnknownSample = 3,
  kBatchShape = 4,
  kCodecMismatch = 5,
  kInternal = 6,
};

struct SessionConfig {
  uint8_t protocol_version = kProtocolVersion;
  uint32_t batch_size = 0;
  uint32_t param_count = 0;
  Codec codec;  // seed is not transmitted; batches derive it from session_seed
  PrivacyBudget dp;
  bool debias = false;
  Reduction reduction = Reduction::kSum;
  bool report_loss = false;
  // Debug flag: 64-bit logits and aggregated gradients on the wire.
  bool wide_wire = false;
  uint64_t session_seed = 0;
  std::array<uint8_t, 32> model_signature{};

  LossMode loss_mode() const;
  friend bool operator==(const SessionConfig&, const SessionConfig&) = default;
};

struct Hello {
  SessionConfig config;
  friend bool operator==(const Hello&, const Hello&) = default;
};

struct HelloAck {
  bool accepted = false;
  std::string reason;
  friend bool operator==(const HelloAck&, const HelloAck&) = default;
};

struct ForwardBatch {
  uint64_t batch_id = 0;
  std::vector<uint64_t> sample_ids;
  // Sent as float32 unless wide; values must then be float32-representable
  // for an exact round trip.
  std::vector<double> logits;
  bool wide = false;
  CompressedGrads grads;
  friend bool operator==(const ForwardBatch&, const ForwardBatch&) = default;
};

// The only payload that flows back per batch: one |f|-length aggregate.
struct AggGrad {
  uint64_t batch_id = 0;
  std::vector<double> gradient;
  bool wide = false;
  std::optional<double> loss_sum;  // batch-sum loss, only when requested
  friend bool operator==(const AggGrad&, const AggGrad&) = default;
};

struct EndSession {
  friend bool operator==(const EndSession&, const EndSession&) = default;
};

struct ErrorMessage {
  ErrorCode code = ErrorCode::kInternal;
  std::string text;
  friend bool operator==(const ErrorMessage&, const ErrorMessage&) = default;
};

using WireMessage =
    std::variant<Hello, HelloAck, ForwardBatch, AggGrad, EndSession, ErrorMessage>;

// Messages the clean room is allowed to send.
using CleanRoomMessage = std::variant<HelloAck, AggGrad, ErrorMessage>;

MessageType message_type(const WireMessage& m);

std::vector<uint8_t> encode_message(const WireMessage& m);
std::vector<uint8_t> encode_message(const CleanRoomMessage& m);
WireMessage decode_message(std::span<const uint8_t> frame);

struct FrameHeader {
  MessageType type;
  uint32_t payload_length;
};
// Validates magic, version and length bound.
FrameHeader parse_frame_header(std::span<const uint8_t> header);

}  // namespace cvr

#endif  // CVR_WIRE_H_
