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

#include <thread>

#include "cvr/metrics.h"
#include "cvr/training.h"
#include "doctest.h"
#include "oracles.h"

namespace cvr {
namespace {

TEST_CASE("sgd and momentum steps") {
  OptimizerConfig cfg;
  cfg.lr = 0.5;
  Optimizer sgd(cfg, 2);
  const std::vector<double> g = {1.0, -2.0};
  CHECK(sgd.step(g, 1) == std::vector<double>{-0.5, 1.0});
  cfg.momentum = 0.5;
  Optimizer mom(cfg, 2);
  mom.step(g, 1);
  CHECK(mom.step(g, 1) == std::vector<double>{-0.75, 1.5});
  cfg.momentum = 0.0;
  cfg.scale_lr_by_batch = true;
  Optimizer scaled(cfg, 2);
  CHECK(scaled.step(g, 4) == std::vector<double>{-0.125, 0.25});
  CHECK_THROWS_AS(scaled.step(std::vector<double>{1.0}, 1), std::invalid_argument);
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(Optimizer(cfg, 1), std::invalid_argument);
}

TEST_CASE("adam first step has magnitude lr") {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::kAdam;
  cfg.lr = 0.1;
  Optimizer adam(cfg, 3);
  const auto d = adam.step(std::vector<double>{3.0, -0.01, 0.0}, 1);
  CHECK(d[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(d[1] == doctest::Approx(0.1).epsilon(1e-4));
  CHECK(d[2] == 0.0);
}

struct Setup {
  AdaptedModel model;
  Dataset data;
};

Setup setup(size_t n, uint64_t seed) {
  GeneratorConfig g;
  g.n = n;
  g.d = 8;
  g.teacher_widths = {8};
  g.seed = seed;
  g.domain = "adv";
  g.domain_shift = 0.5;
  g.base_rate = 0.2;
  Setup s{AdaptedModel(make_base_model(8, std::vector<size_t>{12, 6}, seed + 1)), generate(g)};
  s.model.freeze();
  AdapterSpec spec;
  spec.layers = {0, 1, 2};
  spec.rank = 2;
  spec.seed = seed + 2;
  s.model.add_adapter("a", spec);
  return s;
}

TEST_CASE("local gradient is the per-sample contraction") {
  Setup s = setup(64, 1);
  s.model.set_params("a", oracle::random_matrix(1, s.model.layout("a").param_count, 3, 0.2).values());
  std::vector<size_t> rows(32);
  std::iota(rows.begin(), rows.end(), size_t{0});
  const Batch batch = make_batch(s.data, rows, true);
  const LocalGradient lg = local_gradient(s.model, Trainable::adapter("a"), batch, LossMode::plain());
  const auto logits = forward(s.model, "a", batch.features);
  const auto g = per_sample_grads(s.model, "a", batch.features);
  CHECK(oracle::rel_l2(lg.gradient, oracle::naive_aggregate(g.g, logits, batch.labels)) < 1e-12);
}

TEST_CASE("split training retraces the local oracle") {
  for (const bool wide : {false, true}) {
    Setup split = setup(400, 2);
    Setup local = setup(400, 2);
    SplitTrainConfig cfg;
    cfg.optimizer.lr = 0.05;
    cfg.options.batch_size = 40;
    cfg.options.epochs = 2;
    cfg.options.record_trajectory = true;
    cfg.wide_wire = wide;
    if (wide) cfg.codec = Codec::raw64();

    LabelStore labels = LabelStore::from_pairs(split.data.sample_ids, split.data.labels);
    Dataset features = split.data;
    features.labels.clear();
    auto [client, peer] = make_loopback_pair();
    std::thread server([&, end = peer.get()] { cleanroom_serve(labels, ServerConfig{}, *end); });
    const TrainReport sr = split_train(split.model, "a", features, cfg, *client);
    client->close();
    server.join();

    const TrainReport lr = local_train(local.model, Trainable::adapter("a"), local.data,
                                       cfg.optimizer, LossMode::plain(), cfg.options);
    REQUIRE(sr.steps == 20);
    REQUIRE(lr.trajectory.size() == sr.trajectory.size());
    for (size_t t = 0; t < sr.trajectory.size(); ++t) {
      CHECK(oracle::rel_l2(sr.trajectory[t], lr.trajectory[t]) < (wide ? 1e-10 : 1e-5));
    }
    CHECK(sr.completed);
    CHECK(sr.bytes_up > sr.bytes_down);
  }
}

// Drops the connection after a fixed number of frames.
class FlakyTransport : public Transport {
 public:
  FlakyTransport(Transport& inner, int budget) : inner_(inner), budget_(budget) {}
  void send(std::span<const uint8_t> frame) override {
    if (budget_-- <= 0) {
      inner_.close();
      throw TransportClosed("link dropped");
    }
    inner_.send(frame);
  }
  std::vector<uint8_t> receive() override { return inner_.receive(); }
  void close() override { inner_.close(); }

 private:
  Transport& inner_;
  int budget_;
};

TEST_CASE("a dropped link yields a partial report") {
  Setup s = setup(400, 3);
  LabelStore labels = LabelStore::from_pairs(s.data.sample_ids, s.data.labels);
  Dataset features = s.data;
  features.labels.clear();
  auto [client, peer] = make_loopback_pair();
  std::thread server([&, end = peer.get()] { cleanroom_serve(labels, ServerConfig{}, *end); });
  FlakyTransport flaky(*client, 4);  // Hello + 3 batches
  SplitTrainConfig cfg;
  cfg.options.batch_size = 40;
  const TrainReport r = split_train(s.model, "a", features, cfg, flaky);
  server.join();
  CHECK_FALSE(r.completed);
  CHECK(r.steps == 3);
  CHECK_FALSE(r.error.empty());
}

TEST_CASE("full training needs an unfrozen base") {
  Setup s = setup(100, 4);
  CHECK_THROWS_AS(local_train(s.model, Trainable::all_params(), s.data, OptimizerConfig{},
                              LossMode::plain(), TrainOptions{}),
                  std::logic_error);
}

TEST_CASE("pretraining is deterministic, frozen and learns") {
  GeneratorConfig g;
  g.n = 4000;
  g.d = 8;
  const Dataset data = generate(g);
  PretrainConfig p;
  p.hidden = {16};
  p.optimizer.kind = OptimizerKind::kAdam;
  p.optimizer.lr = 0.01;
  p.options.batch_size = 100;
  p.options.epochs = 3;
  const BaseModel a = pretrain(p, data);
  const BaseModel b = pretrain(p, data);
  CHECK(a == b);
  CHECK(a.frozen);
  AdaptedModel m(a);
  CHECK(evaluate(m, std::nullopt, data).auc > 0.75);
}

TEST_CASE("report JSON without timing is reproducible") {
  TrainReport r;
  r.steps = 3;
  r.loss_curve = {0.1, 0.2};
  r.wall_time_s = 1.5;
  const std::string with = to_json(r);
  const std::string without = to_json(r, false);
  CHECK(with.find("wall_time_s") != std::string::npos);
  CHECK(without.find("wall_time_s") == std::string::npos);
}

}  // namespace
}  // namespace cvr
