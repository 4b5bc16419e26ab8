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

// Random protocol messages for round-trip fuzzing.

#ifndef CVR_TESTS_MESSAGE_GEN_H_
#define CVR_TESTS_MESSAGE_GEN_H_

#include <random>
#include <string>

#include "cvr/wire.h"

namespace cvr::testing {

class MessageGen {
 public:
  explicit MessageGen(uint64_t seed) : rng_(seed) {}

  WireMessage next() {
    switch (pick(6)) {
      case 0: return Hello{session()};
      case 1: return HelloAck{coin(), text()};
      case 2: return forward_batch();
      case 3: return agg_grad();
      case 4: return EndSession{};
      default: return ErrorMessage{static_cast<ErrorCode>(1 + pick(6)), text()};
    }
  }

 private:
  size_t pick(size_t n) { return std::uniform_int_distribution<size_t>(0, n - 1)(rng_); }
  bool coin() { return pick(2) == 1; }
  double value(bool wide) {
    const double v = std::normal_distribution<double>(0.0, 10.0)(rng_);
    return wide ? v : static_cast<float>(v);
  }
  std::string text() {
    std::string s(pick(40), ' ');
    for (char& c : s) c = static_cast<char>(pick(256));
    return s;
  }
  Codec codec() {
    switch (pick(4)) {
      case 0: return Codec::none();
      case 1: return Codec::bf16();
      case 2: return Codec::raw64();
      default: return Codec::qsgd(static_cast<int>(2 + pick(7)), rng_());
    }
  }

  SessionConfig session() {
    SessionConfig s;
    s.batch_size = static_cast<uint32_t>(rng_());
    s.param_count = static_cast<uint32_t>(rng_());
    s.codec = codec();
    s.codec.seed = 0;
    if (coin()) s.dp = PrivacyBudget::label_dp(0.1 + 10.0 * std::uniform_real_distribution<>()(rng_));
    s.debias = coin();
    s.reduction = coin() ? Reduction::kSum : Reduction::kMean;
    s.report_loss = coin();
    s.wide_wire = coin();
    s.session_seed = rng_();
    for (auto& b : s.model_signature) b = static_cast<uint8_t>(rng_());
    return s;
  }

  ForwardBatch forward_batch() {
    ForwardBatch m;
    m.batch_id = rng_();
    m.wide = coin();
    const size_t b = pick(9);
    const size_t f = 1 + pick(12);
    DenseMatrix g(b, f);
    for (double& v : g.values()) v = value(true);
    for (size_t i = 0; i < b; ++i) {
      m.sample_ids.push_back(rng_());
      m.logits.push_back(value(m.wide));
    }
    m.grads = encode(PerSampleGrads{g}, codec());
    return m;
  }

  AggGrad agg_grad() {
    AggGrad m;
    m.batch_id = rng_();
    m.wide = coin();
    m.gradient.resize(pick(30));
    for (double& v : m.gradient) v = value(m.wide);
    if (coin()) m.loss_sum = std::abs(value(true));
    return m;
  }

  std::mt19937_64 rng_;
};

}  // namespace cvr::testing

#endif  // CVR_TESTS_MESSAGE_GEN_H_
