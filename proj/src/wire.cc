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

#include "cvr/wire.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "cvr/common.h"

namespace cvr {
namespace {

constexpr uint8_t kMagic[4] = {'C', 'V', 'R', '1'};

void put_values(ByteWriter& w, std::span<const double> values, bool wide) {
  for (double v : values) {
    if (wide) {
      w.f64(v);
    } else {
      w.f32(static_cast<float>(v));
    }
  }
}

std::vector<double> get_values(ByteReader& r, size_t n, bool wide) {
  if (n > r.remaining() / (wide ? 8 : 4)) throw ProtocolError("truncated payload");
  std::vector<double> out(n);
  for (double& v : out) v = wide ? r.f64() : static_cast<double>(r.f32());
  return out;
}

uint8_t width_byte(bool wide) { return wide ? 8 : 4; }

bool parse_width(uint8_t b) {
  if (b == 8) return true;
  if (b == 4) return false;
  throw ProtocolError("bad value width " + std::to_string(b));
}

bool parse_flag(uint8_t b) {
  if (b > 1) throw ProtocolError("bad flag byte");
  return b == 1;
}

void encode_config(ByteWriter& w, const SessionConfig& c) {
  w.u8(c.protocol_version);
  w.u32(c.batch_size);
  w.u32(c.param_count);
  w.u8(static_cast<uint8_t>(c.codec.kind));
  w.u8(c.codec.bits);
  w.u8(static_cast<uint8_t>(c.dp.mode));
  w.f64(c.dp.epsilon);
  w.u8(c.debias ? 1 : 0);
  w.u8(static_cast<uint8_t>(c.reduction));
  w.u8(c.report_loss ? 1 : 0);
  w.u8(c.wide_wire ? 1 : 0);
  w.u64(c.session_seed);
  w.bytes(c.model_signature);
}

SessionConfig decode_config(ByteReader& r) {
  SessionConfig c;
  c.protocol_version = r.u8();
  c.batch_size = r.u32();
  c.param_count = r.u32();
  const uint8_t codec = r.u8();
  if (codec > static_cast<uint8_t>(CodecKind::kRaw64)) throw ProtocolError("bad codec id");
  c.codec.kind = static_cast<CodecKind>(codec);
  c.codec.bits = r.u8();
  const uint8_t mode = r.u8();
  if (mode > 1) throw ProtocolError("bad dp mode");
  c.dp.mode = static_cast<DpMode>(mode);
  c.dp.epsilon = r.f64();
  c.debias = parse_flag(r.u8());
  const uint8_t red = r.u8();
  if (red > 1) throw ProtocolError("bad reduction");
  c.reduction = static_cast<Reduction>(red);
  c.report_loss = parse_flag(r.u8());
  c.wide_wire = parse_flag(r.u8());
  c.session_seed = r.u64();
  auto sig = r.bytes(32);
  std::copy(sig.begin(), sig.end(), c.model_signature.begin());
  return c;
}

void encode_payload(ByteWriter& w, const Hello& m) { encode_config(w, m.config); }

void encode_payload(ByteWriter& w, const HelloAck& m) {
  w.u8(m.accepted ? 1 : 0);
  w.str(m.reason);
}

void encode_payload(ByteWriter& w, const ForwardBatch& m) {
  if (m.logits.size() != m.sample_ids.size()) {
    throw std::invalid_argument("ForwardBatch: logits and sample_ids differ in length");
  }
  if (m.grads.batch_size != m.sample_ids.size()) {
    throw std::invalid_argument("ForwardBatch: gradient rows != sample count");
  }
  w.u64(m.batch_id);
  w.u32(static_cast<uint32_t>(m.sample_ids.size()));
  w.u8(width_byte(m.wide));
  for (uint64_t id : m.sample_ids) w.u64(id);
  put_values(w, m.logits, m.wide);
  w.u8(static_cast<uint8_t>(m.grads.codec));
  w.u8(m.grads.bits);
  w.u32(m.grads.batch_size);
  w.u32(m.grads.param_count);
  w.u32(static_cast<uint32_t>(m.grads.payload.size()));
  w.bytes(m.grads.payload);
}

void encode_payload(ByteWriter& w, const AggGrad& m) {
  w.u64(m.batch_id);
  w.u8(width_byte(m.wide));
  w.u32(static_cast<uint32_t>(m.gradient.size()));
  put_values(w, m.gradient, m.wide);
  w.u8(m.loss_sum ? 1 : 0);
  if (m.loss_sum) w.f64(*m.loss_sum);
}

void encode_payload(ByteWriter&, const EndSession&) {}

void encode_payload(ByteWriter& w, const ErrorMessage& m) {
  w.u32(static_cast<uint32_t>(m.code));
  w.str(m.text);
}

template <typename Msg>
std::vector<uint8_t> frame(MessageType type, const Msg& m) {
  ByteWriter payload;
  encode_payload(payload, m);
  if (payload.size() > kMaxPayloadBytes) throw ProtocolError("length overflow");
  ByteWriter w;
  w.bytes(kMagic);
  w.u8(kProtocolVersion);
  w.u8(static_cast<uint8_t>(type));
  w.u32(static_cast<uint32_t>(payload.size()));
  w.bytes(payload.buffer());
  return w.take();
}

template <typename T>
constexpr MessageType type_of() {
  if constexpr (std::is_same_v<T, Hello>) return MessageType::kHello;
  if constexpr (std::is_same_v<T, HelloAck>) return MessageType::kHelloAck;
  if constexpr (std::is_same_v<T, ForwardBatch>) return MessageType::kForwardBatch;
  if constexpr (std::is_same_v<T, AggGrad>) return MessageType::kAggGrad;
  if constexpr (std::is_same_v<T, EndSession>) return MessageType::kEndSession;
  if constexpr (std::is_same_v<T, ErrorMessage>) return MessageType::kError;
}

}  // namespace

LossMode SessionConfig::loss_mode() const {
  if (debias && dp.mode == DpMode::kLabelDp) {
    return LossMode::debias(dp.keep_prob(), reduction);
  }
  return LossMode::plain(reduction);
}

MessageType message_type(const WireMessage& m) {
  return std::visit([](const auto& v) { return type_of<std::decay_t<decltype(v)>>(); }, m);
}

std::vector<uint8_t> encode_message(const WireMessage& m) {
  return std::visit(
      [](const auto& v) { return frame(type_of<std::decay_t<decltype(v)>>(), v); }, m);
}

std::vector<uint8_t> encode_message(const CleanRoomMessage& m) {
  return std::visit(
      [](const auto& v) { return frame(type_of<std::decay_t<decltype(v)>>(), v); }, m);
}

FrameHeader parse_frame_header(std::span<const uint8_t> header) {
  if (header.size() < kFrameHeaderBytes) throw ProtocolError("truncated payload");
  if (!std::equal(kMagic, kMagic + 4, header.begin())) throw ProtocolError("bad magic");
  if (header[4] != kProtocolVersion) {
    throw ProtocolError("version mismatch: got " + std::to_string(header[4]));
  }
  const uint8_t type = header[5];
  if (type < 1 || type > 6) {
    throw ProtocolError("unknown message type " + std::to_string(type));
  }
  ByteReader r(header.subspan(6, 4));
  const uint32_t len = r.u32();
  if (len > kMaxPayloadBytes) throw ProtocolError("length overflow");
  return {static_cast<MessageType>(type), len};
}

WireMessage decode_message(std::span<const uint8_t> frame_bytes) {
  const FrameHeader h = parse_frame_header(frame_bytes);
  if (frame_bytes.size() - kFrameHeaderBytes < h.payload_length) {
    throw ProtocolError("truncated payload");
  }
  if (frame_bytes.size() - kFrameHeaderBytes > h.payload_length) {
    throw ProtocolError("trailing bytes after frame");
  }
  ByteReader r(frame_bytes.subspan(kFrameHeaderBytes));
  WireMessage out;
  switch (h.type) {
    case MessageType::kHello:
      out = Hello{decode_config(r)};
      break;
    case MessageType::kHelloAck: {
      HelloAck m;
      m.accepted = parse_flag(r.u8());
      m.reason = r.str();
      out = std::move(m);
      break;
    }
    case MessageType::kForwardBatch: {
      ForwardBatch m;
      m.batch_id = r.u64();
      const uint32_t count = r.u32();
      m.wide = parse_width(r.u8());
      if (count > r.remaining() / 8) throw ProtocolError("truncated payload");
      m.sample_ids.resize(count);
      for (uint64_t& id : m.sample_ids) id = r.u64();
      m.logits = get_values(r, count, m.wide);
      const uint8_t codec = r.u8();
      if (codec > static_cast<uint8_t>(CodecKind::kRaw64)) throw ProtocolError("bad codec id");
      m.grads.codec = static_cast<CodecKind>(codec);
      m.grads.bits = r.u8();
      m.grads.batch_size = r.u32();
      m.grads.param_count = r.u32();
      if (m.grads.batch_size != count) throw ProtocolError("gradient rows != sample count");
      const uint32_t len = r.u32();
      auto payload = r.bytes(len);
      m.grads.payload.assign(payload.begin(), payload.end());
      out = std::move(m);
      break;
    }
    case MessageType::kAggGrad: {
      AggGrad m;
      m.batch_id = r.u64();
      m.wide = parse_width(r.u8());
      const uint32_t count = r.u32();
      m.gradient = get_values(r, count, m.wide);
      if (parse_flag(r.u8())) m.loss_sum = r.f64();
      out = std::move(m);
      break;
    }
    case MessageType::kEndSession:
      out = EndSession{};
      break;
    case MessageType::kError: {
      ErrorMessage m;
      m.code = static_cast<ErrorCode>(r.u32());
      m.text = r.str();
      out = std::move(m);
      break;
    }
  }
  if (r.remaining() != 0) throw ProtocolError("trailing bytes in payload");
  return out;
}

}  // namespace cvr
