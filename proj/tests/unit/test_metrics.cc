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

#include "cvr/metrics.h"
#include "doctest.h"
#include "oracles.h"

namespace cvr {
namespace {

TEST_CASE("AUC hand examples") {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<uint8_t> y = {0, 0, 1, 1};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));
  const std::vector<double> tied = {0.5, 0.5, 0.5, 0.5};
  CHECK(roc_auc(tied, y) == doctest::Approx(0.5));
  const std::vector<double> perfect = {0.0, 0.1, 0.9, 1.0};
  CHECK(roc_auc(perfect, y) == 1.0);
}

TEST_CASE("AUC agrees with pairwise counting, ties included") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 50 + rng() % 300;
    std::vector<double> s(n);
    for (double& v : s) v = static_cast<double>(rng() % 40);  // plenty of ties
    auto y = oracle::random_labels(n, 0.3, rng());
    y[0] = 1;
    y[1] = 0;
    CHECK(roc_auc(s, y) == doctest::Approx(oracle::pairwise_auc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("AUC needs both classes") {
  const std::vector<double> s = {0.1, 0.2};
  CHECK_THROWS_AS(roc_auc(s, std::vector<uint8_t>{1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(roc_auc(s, std::vector<uint8_t>{1}), std::invalid_argument);
}

TEST_CASE("calibration ratio and log loss") {
  const std::vector<double> p = {0.1, 0.1, 0.1, 0.1};
  CHECK(calibration_ratio(p, 0.05) == doctest::Approx(2.0));
  CHECK_THROWS_AS(calibration_ratio(p, 0.0), std::invalid_argument);
  const std::vector<uint8_t> y = {1, 0, 0, 0};
  const double want = -(std::log(0.1) + 3 * std::log(0.9)) / 4;
  CHECK(log_loss(p, y) == doctest::Approx(want));
  const std::vector<double> sure = {0.0, 1.0};
  CHECK(std::isfinite(log_loss(sure, std::vector<uint8_t>{1, 0})));
}

TEST_CASE("evaluate_probs bundles the three metrics") {
  const std::vector<double> p = {0.2, 0.6, 0.1, 0.7};
  const std::vector<uint8_t> y = {0, 1, 0, 0};
  const EvalReport r = evaluate_probs(p, y);
  CHECK(r.n == 4);
  CHECK(r.base_rate == 0.25);
  CHECK(r.auc == doctest::Approx(2.0 / 3.0));
  CHECK(r.calibration_ratio == doctest::Approx(0.4 / 0.25));
  CHECK(r.log_loss == doctest::Approx(log_loss(p, y)));
}

}  // namespace
}  // namespace cvr
