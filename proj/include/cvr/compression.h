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

// Lossy codecs for the per-sample gradient matrix G (b x |f|).
//
// Payload layouts, little-endian:
//   none  : b*|f| float32
//   raw64 : b*|f| float64 (debug wire, not a compression codec)
//   bf16  : b*|f| bfloat16 (top 16 bits of float32, round to nearest even)
//   qsgd  : b float32 row norms, then b*|f| codes of `bits` bits each packed
//           LSB-first; a code is level | sign << (bits - 1). At 8 bits this
//           is one byte per entry with s = 127 levels.

#ifndef CVR_COMPRESSION_H_
#define CVR_COMPRESSION_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/model.h"

namespace cvr {

enum class CodecKind : uint8_t { kNone = 0, kQsgd = 1, kBf16 = 2, kRaw64 = 3 };

struct Codec {
  CodecKind kind = CodecKind::kNone;
  uint8_t bits = 8;   // qsgd only, in [2, 8]
  uint64_t seed = 0;  // qsgd stochastic rounding

  static Codec none() { return {}; }
  static Codec qsgd(int bits = 8, uint64_t seed = 0);
  static Codec bf16() { return {CodecKind::kBf16, 16, 0}; }
  static Codec raw64() { return {CodecKind::kRaw64, 64, 0}; }

  // Quantization levels s = 2^(bits-1) - 1.
  int levels() const { return (1 << (bits - 1)) - 1; }

  bool same_format(const Codec& o) const {
    return kind == o.kind && (kind != CodecKind::kQsgd || bits == o.bits);
  }

  friend bool operator==(const Codec&, const Codec&) = default;
};

// "none", "raw64", "bf16", "qsgd" (8 bits) or "qsgd<bits>" e.g. "qsgd4".
Codec parse_codec(std::string_view name);
std::string codec_name(const Codec& codec);

struct CompressedGrads {
  CodecKind codec = CodecKind::kNone;
  uint8_t bits = 0;
  uint32_t batch_size = 0;
  uint32_t param_count = 0;
  std::vector<uint8_t> payload;

  friend bool operator==(const CompressedGrads&, const CompressedGrads&) = default;
};

CompressedGrads encode(const PerSampleGrads& grads, const Codec& codec);
PerSampleGrads decode(const CompressedGrads& compressed);

// Payload size only, excluding any framing.
uint64_t wire_bytes(uint64_t batch_size, uint64_t param_count, const Codec& codec);

uint16_t float_to_bf16(float value);
float bf16_to_float(uint16_t value);

}  // namespace cvr

#endif  // CVR_COMPRESSION_H_
