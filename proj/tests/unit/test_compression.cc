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

#include <cmath>
#include <limits>

#include "cvr/compression.h"
#include "doctest.h"
#include "oracles.h"

namespace cvr {
namespace {

PerSampleGrads grads_of(DenseMatrix m) { return PerSampleGrads{std::move(m)}; }

TEST_CASE("codec names parse and print") {
  CHECK(parse_codec("none").kind == CodecKind::kNone);
  CHECK(parse_codec("bf16").kind == CodecKind::kBf16);
  CHECK(parse_codec("raw64").kind == CodecKind::kRaw64);
  CHECK(parse_codec("qsgd").bits == 8);
  CHECK(parse_codec("qsgd4").bits == 4);
  CHECK(codec_name(parse_codec("qsgd4")) == "qsgd4");
  CHECK_THROWS_AS(parse_codec("qsgd1"), std::invalid_argument);
  CHECK_THROWS_AS(parse_codec("qsgd9"), std::invalid_argument);
  CHECK_THROWS_AS(parse_codec("zstd"), std::invalid_argument);
  CHECK(Codec::qsgd(8).levels() == 127);
  CHECK(Codec::qsgd(2).levels() == 1);
}

TEST_CASE("payload sizes") {
  CHECK(wire_bytes(64, 512, Codec::none()) == 4u * 64 * 512);
  CHECK(wire_bytes(64, 512, Codec::bf16()) == 2u * 64 * 512);
  CHECK(wire_bytes(64, 512, Codec::raw64()) == 8u * 64 * 512);
  CHECK(wire_bytes(64, 512, Codec::qsgd(8)) == 4u * 64 + 64u * 512);
  CHECK(wire_bytes(3, 5, Codec::qsgd(3)) == 4u * 3 + (3 * 5 * 3 + 7) / 8);
  const auto g = grads_of(oracle::random_matrix(7, 13, 1));
  for (const Codec c : {Codec::none(), Codec::bf16(), Codec::raw64(), Codec::qsgd(8),
                        Codec::qsgd(5), Codec::qsgd(2)}) {
    CHECK(encode(g, c).payload.size() == wire_bytes(7, 13, c));
  }
}

TEST_CASE("none is exact for float values, raw64 for doubles") {
  DenseMatrix m = oracle::random_matrix(4, 9, 2);
  for (double& v : m.values()) v = static_cast<float>(v);
  CHECK(decode(encode(grads_of(m), Codec::none())).g == m);
  const DenseMatrix d = oracle::random_matrix(4, 9, 3);
  CHECK(decode(encode(grads_of(d), Codec::raw64())).g == d);
}

TEST_CASE("bf16 rounds to nearest even, bit for bit") {
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int i = 0; i < 200000; ++i) {
    const float v = n(rng);
    REQUIRE(bf16_to_float(float_to_bf16(v)) == oracle::bf16_round(v));
  }
  // Exact ties: 1 + 2^-8 sits halfway between 1 and 1 + 2^-7.
  CHECK(bf16_to_float(float_to_bf16(1.0f + 0x1p-8f)) == 1.0f);
  CHECK(bf16_to_float(float_to_bf16(1.0f + 3 * 0x1p-8f)) == 1.0f + 0x1p-6f);
  CHECK(std::isinf(bf16_to_float(float_to_bf16(std::numeric_limits<float>::infinity()))));
  CHECK(std::signbit(bf16_to_float(float_to_bf16(-0.0f))));
  CHECK(std::isnan(bf16_to_float(float_to_bf16(std::numeric_limits<float>::quiet_NaN()))));
}

TEST_CASE("qsgd keeps zero rows at zero and is seeded") {
  DenseMatrix m = oracle::random_matrix(3, 50, 5);
  for (double& v : m.row(1)) v = 0.0;
  const auto a = encode(grads_of(m), Codec::qsgd(8, 9));
  const auto b = encode(grads_of(m), Codec::qsgd(8, 9));
  const auto c = encode(grads_of(m), Codec::qsgd(8, 10));
  CHECK(a == b);
  CHECK(a.payload != c.payload);
  const auto d = decode(a).g;
  for (double v : d.row(1)) CHECK(v == 0.0);
}

TEST_CASE("qsgd norm bounds") {
  // Per draw: every coordinate moves by at most one level, so
  // ||Q(v)|| <= ||v|| (1 + sqrt(d) / s). In expectation
  // E||Q(v)||^2 <= (1 + min(d / s^2, sqrt(d) / s)) ||v||^2.
  for (int bits : {2, 4, 8}) {
    const size_t d = 64;
    const double s = Codec::qsgd(bits).levels();
    const DenseMatrix v = oracle::random_matrix(1, d, 6 + bits);
    const double norm = oracle::l2(v.values());
    double second = 0.0;
    const int draws = 3000;
    for (int k = 0; k < draws; ++k) {
      const auto q = decode(encode(grads_of(v), Codec::qsgd(bits, 1000 + k))).g;
      const double qn = oracle::l2(q.values());
      REQUIRE(qn <= norm * (1.0 + std::sqrt(double(d)) / s) * (1.0 + 1e-6));
      second += qn * qn;
    }
    second /= draws;
    const double bound = 1.0 + std::min(d / (s * s), std::sqrt(double(d)) / s);
    CHECK(second <= bound * norm * norm * 1.02);
  }
}

TEST_CASE("qsgd is unbiased (Monte Carlo, 4 sigma)") {
  const size_t d = 16;
  const DenseMatrix v = oracle::random_matrix(1, d, 8);
  const int draws = 4000;
  std::vector<double> sum(d, 0.0), sum2(d, 0.0);
  for (int k = 0; k < draws; ++k) {
    const auto q = decode(encode(grads_of(v), Codec::qsgd(4, 77 + k))).g;
    for (size_t j = 0; j < d; ++j) {
      sum[j] += q(0, j);
      sum2[j] += q(0, j) * q(0, j);
    }
  }
  for (size_t j = 0; j < d; ++j) {
    const double mean = sum[j] / draws;
    const double var = sum2[j] / draws - mean * mean;
    const double se = std::sqrt(std::max(var, 1e-30) / draws);
    CHECK(std::abs(mean - v(0, j)) <= 4.0 * se + 1e-6);
  }
}

TEST_CASE("decode rejects inconsistent payloads") {
  auto enc = encode(grads_of(oracle::random_matrix(2, 5, 9)), Codec::qsgd(8));
  enc.payload.pop_back();
  CHECK_THROWS(decode(enc));
  auto none = encode(grads_of(oracle::random_matrix(2, 5, 9)), Codec::none());
  none.param_count = 6;
  CHECK_THROWS(decode(none));
  DenseMatrix bad = oracle::random_matrix(2, 2, 1);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(encode(grads_of(bad), Codec::qsgd(8)), std::invalid_argument);
}

}  // namespace
}  // namespace cvr
