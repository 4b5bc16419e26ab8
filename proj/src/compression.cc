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

#include "cvr/compression.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>

#include "cvr/common.h"

namespace cvr {
namespace {

void check_bits(int bits) {
  if (bits < 2 || bits > 8) {
    throw std::invalid_argument("qsgd: bits must lie in [2, 8], got " +
                                std::to_string(bits));
  }
}

float to_wire_float(double v) {
  const float f = static_cast<float>(v);
  if (!std::isfinite(f)) throw std::invalid_argument("encode: value overflows float32");
  return f;
}

// Reads fixed-width codes from an LSB-first bit stream.
class BitUnpacker {
 public:
  BitUnpacker(const std::vector<uint8_t>& in, size_t offset) : in_(in), bit_(offset * 8) {}
  uint32_t get(int width) {
    uint32_t code = 0;
    for (int k = 0; k < width; ++k, ++bit_) {
      code |= static_cast<uint32_t>((in_[bit_ >> 3] >> (bit_ & 7)) & 1u) << k;
    }
    return code;
  }

 private:
  const std::vector<uint8_t>& in_;
  size_t bit_;
};

void encode_qsgd(const DenseMatrix& g, const Codec& codec, ByteWriter& w) {
  check_bits(codec.bits);
  const size_t b = g.rows(), f = g.cols();
  const int s = codec.levels();
  const size_t norms_bytes = 4 * b;
  auto& out = w.buffer();
  out.assign(static_cast<size_t>(wire_bytes(b, f, codec)), 0);

  for (size_t i = 0; i < b; ++i) {
    auto row = g.row(i);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double norm = std::sqrt(sq);
    // Round the transmitted norm up so |v| * s / norm never exceeds s.
    float norm_f = to_wire_float(norm);
    if (static_cast<double>(norm_f) < norm) {
      norm_f = std::nextafter(norm_f, std::numeric_limits<float>::infinity());
    }
    std::memcpy(out.data() + 4 * i, &norm_f, 4);

    std::mt19937_64 rng(mix_seed(codec.seed, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const size_t first_bit = norms_bytes * 8 + i * f * codec.bits;
    for (size_t j = 0; j < f; ++j) {
      uint32_t level = 0;
      bool negative = false;
      if (norm_f > 0.0f) {
        const double u = std::abs(row[j]) * s / static_cast<double>(norm_f);
        const double floor_u = std::floor(u);
        level = static_cast<uint32_t>(floor_u);
        if (unif(rng) < u - floor_u) ++level;
        if (level > static_cast<uint32_t>(s)) level = static_cast<uint32_t>(s);
        negative = row[j] < 0.0 && level > 0;
      }
      const uint32_t code = level | (negative ? 1u << (codec.bits - 1) : 0u);
      size_t bit = first_bit + j * codec.bits;
      for (int k = 0; k < codec.bits; ++k, ++bit) {
        if ((code >> k) & 1u) out[bit >> 3] |= static_cast<uint8_t>(1u << (bit & 7));
      }
    }
  }
}

}  // namespace

Codec Codec::qsgd(int bits, uint64_t seed) {
  check_bits(bits);
  return {CodecKind::kQsgd, static_cast<uint8_t>(bits), seed};
}

Codec parse_codec(std::string_view name) {
  if (name == "none") return Codec::none();
  if (name == "raw64") return Codec::raw64();
  if (name == "bf16") return Codec::bf16();
  if (name == "qsgd") return Codec::qsgd(8);
  if (name.starts_with("qsgd")) {
    const std::string digits(name.substr(4));
    if (digits.size() == 1 && digits[0] >= '0' && digits[0] <= '9') {
      return Codec::qsgd(digits[0] - '0');
    }
  }
  throw std::invalid_argument("unknown codec '" + std::string(name) + "'");
}

std::string codec_name(const Codec& codec) {
  switch (codec.kind) {
    case CodecKind::kNone: return "none";
    case CodecKind::kRaw64: return "raw64";
    case CodecKind::kBf16: return "bf16";
    case CodecKind::kQsgd: return "qsgd" + std::to_string(codec.bits);
  }
  return "unknown";
}

uint16_t float_to_bf16(float value) {
  uint32_t bits = std::bit_cast<uint32_t>(value);
  if ((bits & 0x7f800000u) == 0x7f800000u) {
    // inf stays inf, NaN stays a quiet NaN
    return static_cast<uint16_t>((bits >> 16) | ((bits & 0x007fffffu) ? 0x40u : 0u));
  }
  const uint32_t lsb = (bits >> 16) & 1u;
  bits += 0x7fffu + lsb;
  return static_cast<uint16_t>(bits >> 16);
}

float bf16_to_float(uint16_t value) {
  return std::bit_cast<float>(static_cast<uint32_t>(value) << 16);
}

uint64_t wire_bytes(uint64_t batch_size, uint64_t param_count, const Codec& codec) {
  const uint64_t n = batch_size * param_count;
  switch (codec.kind) {
    case CodecKind::kNone: return 4 * n;
    case CodecKind::kRaw64: return 8 * n;
    case CodecKind::kBf16: return 2 * n;
    case CodecKind::kQsgd:
      check_bits(codec.bits);
      return 4 * batch_size + (n * codec.bits + 7) / 8;
  }
  throw std::invalid_argument("wire_bytes: unknown codec");
}

CompressedGrads encode(const PerSampleGrads& grads, const Codec& codec) {
  const DenseMatrix& g = grads.g;
  if (!g.all_finite()) throw std::invalid_argument("encode: non-finite gradient");
  if (g.rows() > UINT32_MAX || g.cols() > UINT32_MAX) {
    throw std::invalid_argument("encode: matrix too large");
  }
  CompressedGrads out;
  out.codec = codec.kind;
  out.batch_size = static_cast<uint32_t>(g.rows());
  out.param_count = static_cast<uint32_t>(g.cols());
  ByteWriter w;
  switch (codec.kind) {
    case CodecKind::kNone:
      out.bits = 32;
      for (double v : g.values()) w.f32(to_wire_float(v));
      break;
    case CodecKind::kRaw64:
      out.bits = 64;
      for (double v : g.values()) w.f64(v);
      break;
    case CodecKind::kBf16:
      out.bits = 16;
      for (double v : g.values()) {
        const uint16_t h = float_to_bf16(to_wire_float(v));
        if ((h & 0x7f80u) == 0x7f80u) throw std::invalid_argument("encode: bf16 overflow");
        w.buffer().push_back(static_cast<uint8_t>(h & 0xff));
        w.buffer().push_back(static_cast<uint8_t>(h >> 8));
      }
      break;
    case CodecKind::kQsgd:
      out.bits = codec.bits;
      encode_qsgd(g, codec, w);
      break;
    default:
      throw std::invalid_argument("encode: unknown codec");
  }
  out.payload = w.take();
  return out;
}

PerSampleGrads decode(const CompressedGrads& c) {
  const size_t b = c.batch_size, f = c.param_count;
  Codec codec;
  codec.kind = c.codec;
  switch (c.codec) {
    case CodecKind::kNone:
      if (c.bits != 32) throw ProtocolError("decode: codec/bits mismatch");
      break;
    case CodecKind::kRaw64:
      if (c.bits != 64) throw ProtocolError("decode: codec/bits mismatch");
      break;
    case CodecKind::kBf16:
      if (c.bits != 16) throw ProtocolError("decode: codec/bits mismatch");
      break;
    case CodecKind::kQsgd:
      if (c.bits < 2 || c.bits > 8) throw ProtocolError("decode: bad qsgd width");
      codec.bits = c.bits;
      break;
    default:
      throw ProtocolError("decode: unknown codec id " +
                          std::to_string(static_cast<int>(c.codec)));
  }
  if (c.payload.size() != wire_bytes(b, f, codec)) {
    throw ProtocolError("decode: payload length " + std::to_string(c.payload.size()) +
                        " does not match " + codec_name(codec) + " layout");
  }
  PerSampleGrads out{DenseMatrix(b, f)};
  auto values = out.g.values();
  ByteReader r(c.payload);
  switch (c.codec) {
    case CodecKind::kNone:
      for (double& v : values) v = r.f32();
      break;
    case CodecKind::kRaw64:
      for (double& v : values) v = r.f64();
      break;
    case CodecKind::kBf16:
      for (double& v : values) {
        const uint16_t lo = r.u8();
        const uint16_t hi = r.u8();
        v = bf16_to_float(static_cast<uint16_t>(lo | (hi << 8)));
      }
      break;
    case CodecKind::kQsgd: {
      const int s = codec.levels();
      std::vector<double> norms(b);
      for (double& n : norms) {
        n = r.f32();
        if (!std::isfinite(n) || n < 0.0) throw ProtocolError("decode: bad qsgd norm");
      }
      BitUnpacker unpack(c.payload, 4 * b);
      const uint32_t sign_bit = 1u << (c.bits - 1);
      for (size_t i = 0; i < b; ++i) {
        for (size_t j = 0; j < f; ++j) {
          const uint32_t code = unpack.get(c.bits);
          const uint32_t level = code & (sign_bit - 1);
          if (level > static_cast<uint32_t>(s)) throw ProtocolError("decode: qsgd level out of range");
          const double mag = norms[i] * static_cast<double>(level) / s;
          out.g(i, j) = (code & sign_bit) ? -mag : mag;
        }
      }
      break;
    }
  }
  if (!out.g.all_finite()) throw ProtocolError("decode: non-finite value");
  return out;
}

}  // namespace cvr
