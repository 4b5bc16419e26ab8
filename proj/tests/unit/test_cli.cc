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

#include "cvr/cli.h"
#include "doctest.h"

namespace cvr {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cvr_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cvr");
  return cli::run(args);
}

TEST_CASE("config flattening, overrides and unknown keys") {
  cli::Config c(nlohmann::ordered_json{{"a.b", 1}, {"a.c", "x"}, {"d", json::array()}});
  c.merge(json{{"a", {{"b", 5}}}});
  CHECK(c.get<int>("a.b") == 5);
  c.apply_override("a.c=42");
  CHECK(c.get<std::string>("a.c") == "42");
  c.apply_override("d=[1,2]");
  CHECK(c.get<std::vector<int>>("d") == std::vector<int>{1, 2});
  CHECK_THROWS_AS(c.apply_override("zzz=1"), cli::UsageError);
  CHECK_THROWS_AS(c.apply_override("a.b=true"), cli::UsageError);
  CHECK_THROWS_AS(c.apply_override("novalue"), cli::UsageError);
}

TEST_CASE("gen-data twice gives identical digests and a manifest") {
  const fs::path dir = scratch("gen");
  REQUIRE(cli({"gen-data", "--out", (dir / "a").string(), "n=800"}) == 0);
  REQUIRE(cli({"gen-data", "--out", (dir / "b").string(), "n=800"}) == 0);
  CHECK(read_json(dir / "a" / "train.json")["digest"] == read_json(dir / "b" / "train.json")["digest"]);
  const json m = read_json(dir / "a" / "manifest.json");
  CHECK(m["status"] == "ok");
  CHECK(m["config"]["n"] == 800);
  CHECK(m["seeds"].contains("seed"));
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("codes");
  CHECK(cli({"gen-data", "--out", dir.string(), "bogus.key=1"}) == 1);
  CHECK(cli({"no-such-command"}) == 1);
  CHECK(cli({"pretrain", "--out", dir.string()}) == 1);  // --data missing
  CHECK(cli({"pretrain", "--out", dir.string(), "--data", (dir / "missing").string()}) == 2);
  CHECK(read_json(dir / "manifest.json")["status"] == "failed");
}

TEST_CASE("pretrain, local-train and eval write the expected reports") {
  const fs::path dir = scratch("pipeline");
  REQUIRE(cli({"gen-data", "--out", (dir / "data").string(), "n=2000", "d=8"}) == 0);
  REQUIRE(cli({"pretrain", "--out", (dir / "pre").string(), "--data",
               (dir / "data" / "train").string(), "model.hidden=[8]", "train.epochs=1"}) == 0);
  REQUIRE(cli({"local-train", "--out", (dir / "ft").string(), "--data",
               (dir / "data" / "train").string(), "--model", (dir / "pre" / "model.cvrm").string(),
               "train.epochs=1", "dp.epsilon=3", "dp.debias=true"}) == 0);
  REQUIRE(cli({"eval", "--model", (dir / "ft" / "model.cvrm").string(), "--adapter", "adv",
               "--data", (dir / "data" / "train").string(), "--report",
               (dir / "r.json").string()}) == 0);
  const json r = read_json(dir / "r.json");
  CHECK(r.contains("auc"));
  CHECK(r.contains("calibration_ratio"));
  CHECK(r.contains("log_loss"));
  CHECK(fs::exists(dir / "r.manifest.json"));
  CHECK(read_json(dir / "ft" / "report.json")["steps"] == 7);

  // Evaluating into a training directory leaves its manifest alone.
  REQUIRE(cli({"eval", "--model", (dir / "ft" / "model.cvrm").string(), "--adapter", "adv",
               "--data", (dir / "data" / "train").string(), "--out", (dir / "ft").string()}) == 0);
  CHECK(read_json(dir / "ft" / "manifest.json")["command"] == "local-train");
  CHECK(read_json(dir / "ft" / "eval.manifest.json")["command"] == "eval");
}

TEST_CASE("split-train over loopback and audit-leakage") {
  const fs::path dir = scratch("split");
  REQUIRE(cli({"gen-data", "--out", (dir / "data").string(), "n=1000", "d=8"}) == 0);
  REQUIRE(cli({"pretrain", "--out", (dir / "pre").string(), "--data",
               (dir / "data" / "train").string(), "model.hidden=[8]", "train.epochs=1"}) == 0);
  const std::vector<std::string> split = {
      "split-train", "--model", (dir / "pre" / "model.cvrm").string(), "--features",
      (dir / "data" / "train.features.bin").string(), "--labels",
      (dir / "data" / "train.labels.csv").string(), "train.batch_size=100", "codec=qsgd"};
  auto run1 = split;
  run1.insert(run1.end(), {"--out", (dir / "s1").string()});
  auto run2 = split;
  run2.insert(run2.end(), {"--out", (dir / "s2").string()});
  REQUIRE(cli(run1) == 0);
  REQUIRE(cli(run2) == 0);
  CHECK(read_json(dir / "s1" / "report_notiming.json") == read_json(dir / "s2" / "report_notiming.json"));

  REQUIRE(cli({"audit-leakage", "--out", (dir / "audit").string(), "audit.repeats=1",
               "audit.input_dim=4", "audit.hidden=[4]"}) == 0);
  std::ifstream csv(dir / "audit" / "leakage.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "b,param_count,codec,epsilon,accuracy,residual");

  REQUIRE(cli({"report", "--out", (dir / "sum").string(), "--inputs", (dir / "s1").string()}) == 0);
  CHECK(read_json(dir / "sum" / "summary.json")[0]["command"] == "split-train");
}

}  // namespace
}  // namespace cvr
