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

#include <filesystem>
#include <fstream>
#include <set>

#include "cvr/common.h"
#include "cvr/data.h"
#include "doctest.h"

namespace cvr {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvr_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST_CASE("generation is deterministic in the seed") {
  GeneratorConfig cfg;
  cfg.n = 3000;
  const Dataset a = generate(cfg);
  const Dataset b = generate(cfg);
  CHECK(dataset_digest(a) == dataset_digest(b));
  cfg.seed = 1;
  CHECK(dataset_digest(generate(cfg)) != dataset_digest(a));
  cfg.seed = 0;
  cfg.split = "test";
  const Dataset t = generate(cfg);
  CHECK(t.sample_ids[0] != a.sample_ids[0]);
}

TEST_CASE("realized base rate hits the target") {
  for (const char* domain : {"pretrain", "adv1"}) {
    GeneratorConfig cfg;
    cfg.n = 20000;
    cfg.domain = domain;
    cfg.domain_shift = 1.0;
    const Dataset d = generate(cfg);
    d.validate();
    CHECK(std::abs(d.base_rate() - 0.05) <= kBaseRateTolerance);
    CHECK(d.features.rows() == 20000);
    CHECK(d.features.cols() == 32);
    // Stored features are float32-representable.
    CHECK(static_cast<double>(static_cast<float>(d.features(7, 3))) == d.features(7, 3));
  }
}

TEST_CASE("teacher depends on domain only through the shift") {
  GeneratorConfig a;
  a.n = 10;
  GeneratorConfig b = a;
  b.domain = "adv";
  DenseMatrix x(3, 32, 0.5);
  x(1, 2) = -1.0;
  CHECK(teacher_scores(a, x) == teacher_scores(b, x));
  b.domain_shift = 0.5;
  CHECK(teacher_scores(a, x) != teacher_scores(b, x));
  GeneratorConfig c = a;
  c.n = 999;
  CHECK(teacher_scores(a, x) == teacher_scores(c, x));
}

TEST_CASE("invalid generator settings") {
  GeneratorConfig cfg;
  cfg.base_rate = 0.7;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
  cfg.base_rate = 0.05;
  cfg.n = 0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}

TEST_CASE("files round trip and keep features apart from labels") {
  GeneratorConfig cfg;
  cfg.n = 500;
  cfg.domain = "adv";
  const Dataset d = generate(cfg);
  const fs::path dir = scratch("roundtrip");
  const DatasetFiles files = save(d, dir / "train");
  CHECK(files.features == dir / "train.features.bin");
  CHECK(files.labels == dir / "train.labels.csv");
  const Dataset back = load(dir / "train");
  CHECK(dataset_digest(back) == dataset_digest(d));
  const Dataset feats = load_features(files.features);
  CHECK_FALSE(feats.has_labels());
  CHECK(feats.features == d.features);
  CHECK(feats.domain == "adv");
  std::ifstream csv(files.labels);
  std::string header;
  std::getline(csv, header);
  CHECK(header == "sample_id,label");
}

TEST_CASE("malformed files are rejected") {
  const fs::path dir = scratch("bad");
  std::ofstream(dir / "a.labels.csv") << "sample_id,label\n1,0\n2,7\n";
  CHECK_THROWS_AS(load_labels_csv(dir / "a.labels.csv"), ProtocolError);
  std::ofstream(dir / "b.labels.csv") << "sample_id,label\n1,0\n1,1\n";
  CHECK_THROWS_AS(load_labels_csv(dir / "b.labels.csv"), ProtocolError);
  std::ofstream(dir / "c.features.bin") << "CVRX";
  CHECK_THROWS_AS(load_features(dir / "c.features.bin"), ProtocolError);
  CHECK_THROWS(load_features(dir / "missing.bin"));
}

TEST_CASE("epoch batches partition the data and drop the remainder") {
  const auto batches = epoch_batches(103, 10, 5, 0);
  REQUIRE(batches.size() == 10);
  std::set<size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() == 10);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 100);
  CHECK(epoch_batches(103, 10, 5, 0) == batches);
  CHECK(epoch_batches(103, 10, 5, 1) != batches);
  CHECK_THROWS_AS(epoch_batches(5, 10, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(epoch_batches(5, 0, 0, 0), std::invalid_argument);
}

}  // namespace
}  // namespace cvr
