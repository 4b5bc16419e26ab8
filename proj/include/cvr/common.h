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

#ifndef CVR_COMMON_H_
#define CVR_COMMON_H_

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cvr {

// Raised for malformed frames, payloads and files.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mixes a seed with a stream index (splitmix64 finalizer). Used to derive
// independent, reproducible RNG streams such as per-batch or per-row seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

// Hex-encoded SHA-256 of `bytes`.
std::string sha256_hex(std::span<const uint8_t> bytes);
std::array<uint8_t, 32> sha256(std::span<const uint8_t> bytes);

// Hex digest over the raw little-endian bytes of a double vector.
std::string checksum(std::span<const double> values);

std::string to_hex(std::span<const uint8_t> bytes);

// Little-endian byte writer/reader shared by the wire and file formats.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::span<const uint8_t> b) {
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  void str(std::string_view s);  // u32 length + bytes

  std::vector<uint8_t>& buffer() { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  float f32();
  double f64();
  std::span<const uint8_t> bytes(size_t n);
  std::string str();

  size_t remaining() const { return data_.size() - pos_; }
  size_t position() const { return pos_; }

 private:
  void need(size_t n) const;

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace cvr

#endif  // CVR_COMMON_H_
