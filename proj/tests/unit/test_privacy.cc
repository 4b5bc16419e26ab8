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

#include "cvr/privacy.h"
#include "doctest.h"
#include "oracles.h"

namespace cvr {
namespace {

TEST_CASE("keep probability") {
  CHECK(keep_prob(3.0) == doctest::Approx(0.952574).epsilon(1e-6));
  CHECK(keep_prob(5.0) == doctest::Approx(0.993307).epsilon(1e-6));
  for (double eps : {0.1, 1.0, 2.5, 8.0}) {
    CHECK(keep_prob(eps) == doctest::Approx(oracle::keep_prob(eps)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(keep_prob(0.0), std::invalid_argument);
  CHECK_THROWS_AS(keep_prob(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(keep_prob(INFINITY), std::invalid_argument);
  CHECK(PrivacyBudget::off().keep_prob() == 1.0);
}

TEST_CASE("flipping is seeded and records its mask") {
  const auto y = oracle::random_labels(2000, 0.3, 1);
  const auto a = flip_labels(y, keep_prob(1.0), 42);
  const auto b = flip_labels(y, keep_prob(1.0), 42);
  const auto c = flip_labels(y, keep_prob(1.0), 43);
  CHECK(a.labels == b.labels);
  CHECK(a.labels != c.labels);
  for (size_t i = 0; i < y.size(); ++i) CHECK(a.labels[i] == (y[i] ^ a.flip_mask[i]));
  CHECK(flip_labels(y, 1.0, 5).labels == y);
}

TEST_CASE("de-biased probability") {
  const double q = keep_prob(3.0);
  CHECK(debias_prob(0.0, q) == doctest::Approx(1.0 - q));
  CHECK(debias_prob(1.0, q) == doctest::Approx(q));
  CHECK(debias_prob(0.2, q) == doctest::Approx(0.2 * q + 0.8 * (1.0 - q)));
  // Flipped base rate from 5% positives.
  CHECK(debias_prob(0.05, q) == doctest::Approx(0.05 * q + 0.95 * (1.0 - q)));
}

TEST_CASE("loss gradients agree with central differences") {
  const std::vector<double> z = {-4.0, -0.3, 0.0, 1.7, 6.0, -9.0};
  const std::vector<uint8_t> y = {0, 1, 1, 0, 1, 0};
  for (const LossMode mode : {LossMode::plain(), LossMode::debias(keep_prob(3.0)),
                              LossMode::debias(keep_prob(1.0), Reduction::kMean)}) {
    const auto g = loss_grad_wrt_logit(z, y, mode);
    for (size_t i = 0; i < z.size(); ++i) {
      auto plus = z;
      auto minus = z;
      plus[i] += 1e-6;
      minus[i] -= 1e-6;
      const double fd = (loss(plus, y, mode) - loss(minus, y, mode)) / 2e-6;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-8));
    }
  }
}

TEST_CASE("plain gradient is p - y and keep_prob 1 de-bias reduces to it") {
  const std::vector<double> z = {-2.0, 0.5, 3.0};
  const std::vector<uint8_t> y = {1, 0, 1};
  const auto g = loss_grad_wrt_logit(z, y, LossMode::plain());
  for (size_t i = 0; i < z.size(); ++i) {
    CHECK(g[i] == doctest::Approx(oracle::sigmoid(z[i]) - y[i]).epsilon(1e-14));
  }
  CHECK(loss_grad_wrt_logit(z, y, LossMode::debias(1.0)) == g);
  const auto mean = loss_grad_wrt_logit(z, y, LossMode::plain(Reduction::kMean));
  CHECK(mean[1] == doctest::Approx(g[1] / 3.0));
}

TEST_CASE("de-biased loss value matches the closed form") {
  const double q = keep_prob(2.0);
  const std::vector<double> z = {0.4, -1.1};
  const std::vector<uint8_t> y = {1, 0};
  const double p0 = oracle::sigmoid(0.4);
  const double p1 = oracle::sigmoid(-1.1);
  const double want = -std::log(p0 * q + (1 - p0) * (1 - q)) -
                      std::log(1.0 - (p1 * q + (1 - p1) * (1 - q)));
  CHECK(loss(z, y, LossMode::debias(q)) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("extreme logits stay finite") {
  const std::vector<double> z = {800.0, -800.0};
  const std::vector<uint8_t> y = {0, 1};
  for (const LossMode mode : {LossMode::plain(), LossMode::debias(keep_prob(3.0))}) {
    CHECK(std::isfinite(loss(z, y, mode)));
    for (double g : loss_grad_wrt_logit(z, y, mode)) CHECK(std::isfinite(g));
  }
}

TEST_CASE("invalid inputs") {
  const std::vector<double> z = {0.0};
  CHECK_THROWS_AS(loss_grad_wrt_logit(z, std::vector<uint8_t>{2}, LossMode::plain()),
                  std::invalid_argument);
  CHECK_THROWS_AS(loss(z, std::vector<uint8_t>{}, LossMode::plain()), std::invalid_argument);
  CHECK_THROWS_AS(LossMode::debias(0.5), std::invalid_argument);
}

}  // namespace
}  // namespace cvr
