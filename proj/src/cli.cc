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

#include "cvr/cli.h"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "cvr/audit.h"
#include "cvr/common.h"
#include "cvr/data.h"
#include "cvr/metrics.h"
#include "cvr/model.h"
#include "cvr/session.h"
#include "cvr/training.h"
#include "cvr/transport.h"
#include "cvr/wire.h"

namespace cvr::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

json flatten(const json& doc) {
  json out = json::object();
  auto walk = [&](auto&& self, const json& node, const std::string& prefix) -> void {
    if (node.is_object() && !node.empty()) {
      for (const auto& [k, v] : node.items()) {
        self(self, v, prefix.empty() ? k : prefix + "." + k);
      }
    } else {
      out[prefix] = node;
    }
  };
  if (!doc.is_object()) throw UsageError("config: top level must be a JSON object");
  walk(walk, doc, "");
  return out;
}

Config::Config(ojson defaults) : values_(std::move(defaults)) {}

void Config::set(const std::string& key, json value) {
  if (!values_.contains(key)) throw UsageError("config: unknown key '" + key + "'");
  const json& current = values_[key];
  const bool numeric = current.is_number() && value.is_number();
  if (!current.is_null() && !numeric && current.type() != value.type()) {
    throw UsageError("config: key '" + key + "' expects " + current.type_name() + ", got " +
                     value.type_name());
  }
  values_[key] = std::move(value);
}

void Config::merge(const json& doc) {
  const json flat = flatten(doc);
  for (const auto& [k, v] : flat.items()) set(k, v);
}

void Config::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config: " + path + ": " + e.what());
  }
  merge(doc);
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;
  if (values_.contains(key) && values_[key].is_string() && !value.is_string()) value = text;
  set(key, std::move(value));
}

const json& Config::at(const std::string& key) const {
  static thread_local json holder;
  if (!values_.contains(key)) throw std::logic_error("config: no key " + key);
  holder = values_.at(key);
  return holder;
}

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::vector<std::string> overrides;
  std::string data;
  std::string model;
  std::string features;
  std::string labels;
  std::string listen;
  std::string transport = "loopback";
  std::string adapter;
  std::string report;
  std::vector<std::string> inputs;
};

struct RunContext {
  std::string command;
  std::vector<std::string> argv;
  ojson inputs = ojson::object();
  ojson outputs = ojson::array();
  std::string status = "ok";
};

// ---- config schemas --------------------------------------------------------

ojson optimizer_defaults(double lr) {
  return {{"optimizer.kind", "adam"},        {"optimizer.lr", lr},
          {"optimizer.momentum", 0.0},       {"optimizer.beta1", 0.9},
          {"optimizer.beta2", 0.999},        {"optimizer.scale_lr_by_batch", false}};
}

ojson train_defaults(size_t batch, size_t epochs) {
  return {{"train.batch_size", batch}, {"train.epochs", epochs}, {"train.seed", 0},
          {"train.max_steps", 0}};
}

ojson adapter_defaults() {
  return {{"adapter.id", "adv"},  {"adapter.rank", 1},   {"adapter.layers", json::array()},
          {"adapter.alpha", 0.0}, {"adapter.seed", 0}};
}

ojson dp_defaults() { return {{"dp.epsilon", 0.0}, {"dp.debias", false}, {"dp.seed", 0}}; }

ojson merged(std::initializer_list<ojson> parts) {
  ojson out = ojson::object();
  for (const auto& p : parts) {
    for (const auto& [k, v] : p.items()) out[k] = v;
  }
  return out;
}

ojson defaults_for(const std::string& cmd) {
  if (cmd == "gen-data") {
    return {{"seed", 0},
            {"n", 1000},
            {"d", 32},
            {"base_rate", 0.05},
            {"domain", "pretrain"},
            {"domain_shift", 0.0},
            {"signal_scale", 3.0},
            {"split", "train"},
            {"teacher_widths", {64, 32}},
            {"name", ""}};
  }
  if (cmd == "pretrain") {
    return merged({{{"model.hidden", {64, 32}}, {"model.seed", 0}},
                   optimizer_defaults(3e-3),
                   train_defaults(256, 5)});
  }
  if (cmd == "local-train") {
    return merged({{{"trainable", "adapter"}},
                   adapter_defaults(),
                   optimizer_defaults(1e-2),
                   train_defaults(256, 3),
                   dp_defaults()});
  }
  if (cmd == "split-train") {
    return merged({{{"codec", "none"},
                    {"session.seed", 0},
                    {"report_loss", true},
                    {"reduction", "sum"},
                    {"wide_wire", false}},
                   adapter_defaults(),
                   optimizer_defaults(1e-2),
                   train_defaults(256, 3),
                   dp_defaults()});
  }
  if (cmd == "serve-cleanroom") {
    return merged({{{"sessions", 1},
                    {"pin.batch_size", 0},
                    {"pin.param_count", 0},
                    {"pin.codec", ""},
                    {"allow_loss_report", true}},
                   dp_defaults()});
  }
  if (cmd == "audit-leakage") {
    return {{"audit.input_dim", 16},
            {"audit.hidden", {32, 16}},
            {"audit.rank", 1},
            {"audit.up_init_stddev", 0.5},
            {"audit.batch_sizes", json::array()},
            {"audit.repeats", 3},
            {"audit.epsilons", {0.0}},
            {"audit.positive_rate", 0.5},
            {"audit.seed", 0},
            {"codec", "none"}};
  }
  return ojson::object();  // eval, report
}

OptimizerConfig optimizer_from(const Config& c) {
  OptimizerConfig o;
  const auto kind = c.get<std::string>("optimizer.kind");
  if (kind == "sgd") {
    o.kind = OptimizerKind::kSgd;
  } else if (kind == "adam") {
    o.kind = OptimizerKind::kAdam;
  } else {
    throw UsageError("optimizer.kind must be sgd or adam");
  }
  o.lr = c.get<double>("optimizer.lr");
  o.momentum = c.get<double>("optimizer.momentum");
  o.beta1 = c.get<double>("optimizer.beta1");
  o.beta2 = c.get<double>("optimizer.beta2");
  o.scale_lr_by_batch = c.get<bool>("optimizer.scale_lr_by_batch");
  o.validate();
  return o;
}

TrainOptions train_from(const Config& c) {
  TrainOptions t;
  t.batch_size = c.get<size_t>("train.batch_size");
  t.epochs = c.get<size_t>("train.epochs");
  t.shuffle_seed = c.get<uint64_t>("train.seed");
  t.max_steps = c.get<size_t>("train.max_steps");
  t.record_loss = true;
  if (t.batch_size == 0) throw UsageError("train.batch_size must be positive");
  return t;
}

PrivacyBudget dp_from(const Config& c) {
  const double eps = c.get<double>("dp.epsilon");
  if (eps < 0.0) throw UsageError("dp.epsilon must be >= 0 (0 disables label DP)");
  return eps > 0.0 ? PrivacyBudget::label_dp(eps) : PrivacyBudget::off();
}

// Adds the configured adapter unless the checkpoint already carries it.
std::string ensure_adapter(AdaptedModel& model, const Config& c) {
  const auto id = c.get<std::string>("adapter.id");
  if (model.has_adapter(id)) return id;
  AdapterSpec spec;
  spec.rank = c.get<size_t>("adapter.rank");
  spec.seed = c.get<uint64_t>("adapter.seed");
  spec.layers = c.get<std::vector<size_t>>("adapter.layers");
  if (spec.layers.empty()) {
    for (size_t l = 0; l < model.base().layers.size(); ++l) spec.layers.push_back(l);
  }
  const double alpha = c.get<double>("adapter.alpha");
  if (alpha > 0.0) spec.alpha = alpha;
  model.add_adapter(id, spec);
  return id;
}

// ---- helpers ---------------------------------------------------------------

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
  return value;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return sha256_hex(bytes);
}

void note_input(RunContext& ctx, const fs::path& path) {
  ctx.inputs[path.string()] = file_digest(path);
}

void write_text(RunContext& ctx, const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
  ctx.outputs.push_back(path.string());
}

ojson eval_json(const EvalReport& r) {
  return {{"n", r.n},
          {"base_rate", r.base_rate},
          {"auc", r.auc},
          {"calibration_ratio", r.calibration_ratio},
          {"log_loss", r.log_loss},
          {"mean_prob", r.mean_prob}};
}

ojson serve_json(const ServeReport& r) {
  ojson j = {{"accepted", r.accepted},     {"batches", r.batches},
             {"batch_errors", r.batch_errors}, {"bytes_in", r.bytes_in},
             {"bytes_out", r.bytes_out}};
  if (!r.reject_reason.empty()) j["reject_reason"] = r.reject_reason;
  return j;
}

LabelStore load_label_store(const fs::path& path, const Config& c, RunContext& ctx) {
  LabelStore store = LabelStore::from_csv(path);
  note_input(ctx, path);
  const PrivacyBudget dp = dp_from(c);
  if (dp.mode == DpMode::kLabelDp) store.apply_label_dp(dp.keep_prob(), c.get<uint64_t>("dp.seed"));
  return store;
}

ServerConfig server_from(const Config& c) {
  ServerConfig s;
  s.dp = dp_from(c);
  s.debias = c.get<bool>("dp.debias");
  if (c.values().contains("pin.batch_size")) {
    if (auto b = c.get<uint32_t>("pin.batch_size")) s.batch_size = b;
    if (auto f = c.get<uint32_t>("pin.param_count")) s.param_count = f;
    if (auto name = c.get<std::string>("pin.codec"); !name.empty()) s.codec = parse_codec(name);
    s.allow_loss_report = c.get<bool>("allow_loss_report");
  }
  return s;
}

// ---- subcommands -----------------------------------------------------------

void cmd_gen_data(const Config& c, const Flags& f, RunContext& ctx) {
  GeneratorConfig g;
  g.seed = c.get<uint64_t>("seed");
  g.n = c.get<size_t>("n");
  g.d = c.get<size_t>("d");
  g.base_rate = c.get<double>("base_rate");
  g.domain = c.get<std::string>("domain");
  g.domain_shift = c.get<double>("domain_shift");
  g.signal_scale = c.get<double>("signal_scale");
  g.split = c.get<std::string>("split");
  g.teacher_widths = c.get<std::vector<size_t>>("teacher_widths");
  std::string name = c.get<std::string>("name");
  if (name.empty()) name = g.split;

  const Dataset data = generate(g);
  const DatasetFiles files = save(data, fs::path(f.out) / name);
  ctx.outputs.push_back(files.features.string());
  ctx.outputs.push_back(files.labels.string());
  const ojson summary = {{"n", data.size()},
                         {"d", data.features.cols()},
                         {"base_rate", data.base_rate()},
                         {"digest", dataset_digest(data)}};
  write_text(ctx, fs::path(f.out) / (name + ".json"), summary.dump(2));
  std::cout << summary.dump() << "\n";
}

void cmd_pretrain(const Config& c, const Flags& f, RunContext& ctx) {
  const fs::path prefix = require(f.data, "--data");
  const Dataset data = load(prefix);
  note_input(ctx, dataset_files(prefix).features);
  note_input(ctx, dataset_files(prefix).labels);
  PretrainConfig p;
  p.hidden = c.get<std::vector<size_t>>("model.hidden");
  p.seed = c.get<uint64_t>("model.seed");
  p.optimizer = optimizer_from(c);
  p.options = train_from(c);
  TrainReport report;
  AdaptedModel model(pretrain(p, data, &report));
  save_model(model, fs::path(f.out) / "model.cvrm");
  ctx.outputs.push_back((fs::path(f.out) / "model.cvrm").string());
  write_text(ctx, fs::path(f.out) / "report.json", to_json(report));
}

void cmd_local_train(const Config& c, const Flags& f, RunContext& ctx) {
  const fs::path prefix = require(f.data, "--data");
  AdaptedModel model = load_model(require(f.model, "--model"));
  note_input(ctx, f.model);
  Dataset data = load(prefix);
  note_input(ctx, dataset_files(prefix).features);
  note_input(ctx, dataset_files(prefix).labels);

  const PrivacyBudget dp = dp_from(c);
  LossMode mode = LossMode::plain();
  if (dp.mode == DpMode::kLabelDp) {
    // Same one-shot flipping as the clean room, keyed by sample id.
    LabelStore store = LabelStore::from_pairs(data.sample_ids, data.labels);
    store.apply_label_dp(dp.keep_prob(), c.get<uint64_t>("dp.seed"));
    for (size_t i = 0; i < data.size(); ++i) data.labels[i] = *store.find(data.sample_ids[i]);
    if (c.get<bool>("dp.debias")) mode = LossMode::debias(dp.keep_prob());
  }

  Trainable trainable;
  const auto which = c.get<std::string>("trainable");
  if (which == "adapter") {
    trainable = Trainable::adapter(ensure_adapter(model, c));
  } else if (which == "full") {
    model.unfreeze();
    trainable = Trainable::all_params();
  } else {
    throw UsageError("trainable must be adapter or full");
  }
  const TrainReport report =
      local_train(model, trainable, data, optimizer_from(c), mode, train_from(c));
  if (!trainable.adapter_id) model.freeze();
  save_model(model, fs::path(f.out) / "model.cvrm");
  ctx.outputs.push_back((fs::path(f.out) / "model.cvrm").string());
  write_text(ctx, fs::path(f.out) / "report.json", to_json(report));
}

void cmd_split_train(const Config& c, const Flags& f, RunContext& ctx) {
  AdaptedModel model = load_model(require(f.model, "--model"));
  note_input(ctx, f.model);
  const fs::path features = require(f.features, "--features");
  const Dataset data = load_features(features);
  note_input(ctx, features);
  const std::string adapter_id = ensure_adapter(model, c);

  SplitTrainConfig s;
  s.codec = parse_codec(c.get<std::string>("codec"));
  s.dp = dp_from(c);
  s.debias = c.get<bool>("dp.debias");
  const auto reduction = c.get<std::string>("reduction");
  if (reduction != "sum" && reduction != "mean") throw UsageError("reduction must be sum or mean");
  s.reduction = reduction == "sum" ? Reduction::kSum : Reduction::kMean;
  s.report_loss = c.get<bool>("report_loss");
  s.wide_wire = c.get<bool>("wide_wire");
  s.session_seed = c.get<uint64_t>("session.seed");
  s.optimizer = optimizer_from(c);
  s.options = train_from(c);

  TrainReport report;
  if (f.transport == "loopback") {
    // Both roles in one process; only meant for local experiments.
    LabelStore labels = load_label_store(require(f.labels, "--labels (loopback)"), c, ctx);
    auto [client_end, server_end] = make_loopback_pair();
    ServeReport served;
    std::thread server([&, end = server_end.get()] {
      served = cleanroom_serve(labels, server_from(c), *end);
    });
    try {
      report = split_train(model, adapter_id, data, s, *client_end);
    } catch (...) {
      client_end->close();
      server.join();
      throw;
    }
    client_end->close();
    server.join();
  } else if (f.transport.rfind("tcp:", 0) == 0) {
    if (!f.labels.empty()) throw UsageError("--labels is only valid with --transport loopback");
    const Endpoint ep = parse_endpoint(f.transport.substr(4));
    auto conn = tcp_connect(ep.host, ep.port, 10000);
    report = split_train(model, adapter_id, data, s, *conn);
    conn->close();
  } else {
    throw UsageError("--transport must be loopback or tcp:HOST:PORT");
  }
  if (!report.completed) ctx.status = "partial";
  save_model(model, fs::path(f.out) / "model.cvrm");
  ctx.outputs.push_back((fs::path(f.out) / "model.cvrm").string());
  write_text(ctx, fs::path(f.out) / "report.json", to_json(report));
  write_text(ctx, fs::path(f.out) / "report_notiming.json", to_json(report, false));
  std::cout << "final_checksum " << report.final_checksum << "\n";
  if (!report.completed) throw std::runtime_error("session aborted: " + report.error);
}

void cmd_serve(const Config& c, const Flags& f, RunContext& ctx) {
  const LabelStore labels = load_label_store(require(f.labels, "--labels"), c, ctx);
  const Endpoint ep = parse_endpoint(require(f.listen, "--listen"));
  const ServerConfig server = server_from(c);
  TcpListener listener(ep.host, ep.port);
  std::cout << "listening " << ep.host << ":" << listener.port() << std::endl;
  const auto sessions = c.get<size_t>("sessions");
  ojson served = ojson::array();
  for (size_t i = 0; i < sessions; ++i) {
    auto conn = listener.accept();
    const ServeReport r = cleanroom_serve(labels, server, *conn);
    conn->close();
    served.push_back(serve_json(r));
    spdlog::info("session {} done: accepted={} batches={}", i, r.accepted, r.batches);
  }
  write_text(ctx, fs::path(f.out) / "serve_report.json", served.dump(2));
}

void cmd_eval(const Flags& f, RunContext& ctx) {
  const AdaptedModel model = load_model(require(f.model, "--model"));
  note_input(ctx, f.model);
  const fs::path prefix = require(f.data, "--data");
  const Dataset data = load(prefix);
  note_input(ctx, dataset_files(prefix).features);
  note_input(ctx, dataset_files(prefix).labels);
  std::optional<std::string> adapter;
  if (!f.adapter.empty()) adapter = f.adapter;
  const EvalReport r = evaluate(model, adapter, data);
  const std::string text = eval_json(r).dump(2);
  const fs::path out = f.report.empty() ? fs::path(f.out) / "eval.json" : fs::path(f.report);
  write_text(ctx, out, text);
  std::cout << eval_json(r).dump() << "\n";
}

void cmd_audit(const Config& c, const Flags& f, RunContext& ctx) {
  LeakageSweepConfig a;
  a.input_dim = c.get<size_t>("audit.input_dim");
  a.hidden = c.get<std::vector<size_t>>("audit.hidden");
  a.rank = c.get<size_t>("audit.rank");
  a.up_init_stddev = c.get<double>("audit.up_init_stddev");
  a.batch_sizes = c.get<std::vector<size_t>>("audit.batch_sizes");
  a.repeats = c.get<size_t>("audit.repeats");
  a.epsilons = c.get<std::vector<double>>("audit.epsilons");
  a.positive_rate = c.get<double>("audit.positive_rate");
  a.seed = c.get<uint64_t>("audit.seed");
  a.codec = parse_codec(c.get<std::string>("codec"));
  const auto rows = leakage_sweep(a);
  write_text(ctx, fs::path(f.out) / "leakage.csv", leakage_csv(rows));
  ojson j = ojson::array();
  for (const auto& r : rows) {
    j.push_back({{"b", r.report.batch_size},
                 {"param_count", r.report.param_count},
                 {"regime", regime_name(r.report.regime)},
                 {"codec", r.codec},
                 {"epsilon", r.epsilon},
                 {"repeat", r.repeat},
                 {"accuracy", r.report.accuracy},
                 {"majority_rate", r.report.majority_rate},
                 {"residual", r.report.residual},
                 {"degenerate", r.report.degenerate}});
  }
  write_text(ctx, fs::path(f.out) / "leakage.json", j.dump(2));
}

void cmd_report(const Flags& f, RunContext& ctx) {
  if (f.inputs.empty()) throw UsageError("report needs --inputs DIR...");
  ojson rows = ojson::array();
  for (const auto& dir : f.inputs) {
    ojson row = {{"dir", dir}};
    const fs::path manifest = fs::path(dir) / "manifest.json";
    if (fs::exists(manifest)) {
      std::ifstream in(manifest);
      const json m = json::parse(in);
      row["command"] = m.value("command", "");
      row["status"] = m.value("status", "");
    }
    for (const char* name : {"report.json", "eval.json"}) {
      const fs::path p = fs::path(dir) / name;
      if (!fs::exists(p)) continue;
      std::ifstream in(p);
      const json r = json::parse(in);
      for (const char* key : {"auc", "calibration_ratio", "log_loss", "steps", "bytes_up",
                              "bytes_down", "final_checksum"}) {
        if (r.contains(key)) row[key] = r[key];
      }
    }
    rows.push_back(row);
    std::cout << row.dump() << "\n";
  }
  write_text(ctx, fs::path(f.out) / "summary.json", rows.dump(2));
}

void write_manifest(const Config& c, const Flags& f, const RunContext& ctx,
                    const std::string& error) {
  // eval often shares a run directory, so its manifest sits beside its report.
  fs::path path;
  if (ctx.command == "eval" && (!f.report.empty() || !f.out.empty())) {
    const fs::path report = f.report.empty() ? fs::path(f.out) / "eval.json" : fs::path(f.report);
    path = fs::path(report).replace_extension(".manifest.json");
  } else if (!f.out.empty()) {
    path = fs::path(f.out) / "manifest.json";
  } else {
    return;
  }
  ojson seeds = ojson::object();
  for (const auto& [k, v] : c.values().items()) {
    if (k == "seed" || k.ends_with(".seed")) seeds[k] = v;
  }
  ojson m = {{"command", ctx.command},
             {"version", kVersion},
             {"protocol_version", kProtocolVersion},
             {"argv", ctx.argv},
             {"config", c.values()},
             {"seeds", seeds},
             {"inputs", ctx.inputs},
             {"outputs", ctx.outputs},
             {"status", error.empty() ? ctx.status : "failed"}};
  if (!error.empty()) m["error"] = error;
  try {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream(path) << m.dump(2) << "\n";
  } catch (const std::exception& e) {
    spdlog::error("could not write manifest {}: {}", path.string(), e.what());
  }
}

void setup_logging() {
  static bool done = false;
  if (!done) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("cvr"));
    done = true;
  }
  const char* env = std::getenv("CVR_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

}  // namespace

int run(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"Split-learning CVR training with a label clean room"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);
  Flags f;

  const std::vector<std::string> names = {"gen-data",    "pretrain",        "local-train",
                                          "split-train", "serve-cleanroom", "eval",
                                          "audit-leakage", "report"};
  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("overrides", f.overrides, "key=value config overrides");
    const bool out_required = name != "eval";
    auto* out = sub->add_option("--out", f.out, "Output directory");
    if (out_required) out->required();
    if (name == "pretrain" || name == "local-train" || name == "eval") {
      sub->add_option("--data", f.data, "Dataset prefix (<prefix>.features.bin/.labels.csv)")
          ->required();
    }
    if (name == "local-train" || name == "split-train" || name == "eval") {
      sub->add_option("--model", f.model, "Model checkpoint")->required();
    }
    if (name == "split-train") {
      sub->add_option("--features", f.features, "Feature file")->required();
      sub->add_option("--transport", f.transport, "loopback or tcp:HOST:PORT");
      sub->add_option("--labels", f.labels, "Label CSV (loopback only)");
    }
    if (name == "serve-cleanroom") {
      sub->add_option("--labels", f.labels, "Label CSV")->required();
      sub->add_option("--listen", f.listen, "HOST:PORT (port 0 = ephemeral)")->required();
    }
    if (name == "eval") {
      sub->add_option("--adapter", f.adapter, "Adapter id (default: base only)");
      sub->add_option("--report", f.report, "Report path (default: <out>/eval.json)");
    }
    if (name == "report") sub->add_option("--inputs", f.inputs, "Run directories")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  RunContext ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  ctx.argv.assign(argv, argv + argc);
  if (ctx.command == "eval" && f.out.empty() && f.report.empty()) {
    std::cerr << "eval: one of --out or --report is required\n";
    return kUsage;
  }

  Config config(defaults_for(ctx.command));
  try {
    if (!f.config.empty()) config.merge_file(f.config);
    for (const auto& o : f.overrides) config.apply_override(o);
  } catch (const std::exception& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  std::string error;
  int code = kOk;
  try {
    if (!f.out.empty()) fs::create_directories(f.out);
    const std::string& cmd = ctx.command;
    if (cmd == "gen-data") cmd_gen_data(config, f, ctx);
    else if (cmd == "pretrain") cmd_pretrain(config, f, ctx);
    else if (cmd == "local-train") cmd_local_train(config, f, ctx);
    else if (cmd == "split-train") cmd_split_train(config, f, ctx);
    else if (cmd == "serve-cleanroom") cmd_serve(config, f, ctx);
    else if (cmd == "eval") cmd_eval(f, ctx);
    else if (cmd == "audit-leakage") cmd_audit(config, f, ctx);
    else cmd_report(f, ctx);
  } catch (const UsageError& e) {
    error = e.what();
    code = kUsage;
  } catch (const nlohmann::json::exception& e) {
    error = std::string("config: ") + e.what();
    code = kUsage;
  } catch (const std::exception& e) {
    error = e.what();
    code = kRuntime;
  }
  if (!error.empty()) {
    std::cerr << ctx.command << ": " << error << "\n";
    spdlog::error("{} failed: {}", ctx.command, error);
  }
  write_manifest(config, f, ctx, error);
  return code;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cvr::cli
