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

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <thread>

#include "cvr/audit.h"
#include "cvr/compression.h"
#include "cvr/data.h"
#include "cvr/metrics.h"
#include "cvr/model.h"
#include "cvr/privacy.h"
#include "cvr/session.h"
#include "cvr/training.h"
#include "cvr/wire.h"

namespace py = pybind11;
using namespace cvr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

DenseMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
  const auto rows = static_cast<size_t>(a.shape(0));
  const auto cols = static_cast<size_t>(a.shape(1));
  return DenseMatrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> from_matrix(const DenseMatrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

template <typename T>
py::array_t<T> from_vector(const std::vector<T>& v) {
  py::array_t<T> out(v.size());
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

std::vector<uint8_t> to_bytes(const ByteArray& a) { return {a.data(), a.data() + a.size()}; }
std::vector<double> to_vec(const Array& a) { return {a.data(), a.data() + a.size()}; }

Dataset to_dataset(const py::dict& d) {
  Dataset data;
  data.domain = d.contains("domain") ? d["domain"].cast<std::string>() : "pretrain";
  data.sample_ids = d["sample_ids"].cast<std::vector<uint64_t>>();
  data.features = to_matrix(d["features"].cast<Array>());
  if (d.contains("labels")) data.labels = to_bytes(d["labels"].cast<ByteArray>());
  data.validate();
  return data;
}

py::dict from_dataset(const Dataset& data) {
  py::dict d;
  d["domain"] = data.domain;
  d["sample_ids"] = from_vector(data.sample_ids);
  d["features"] = from_matrix(data.features);
  d["labels"] = from_vector(data.labels);
  return d;
}

py::dict eval_dict(const EvalReport& r) {
  py::dict d;
  d["n"] = r.n;
  d["base_rate"] = r.base_rate;
  d["auc"] = r.auc;
  d["calibration_ratio"] = r.calibration_ratio;
  d["log_loss"] = r.log_loss;
  return d;
}

OptimizerConfig make_optimizer(const std::string& kind, double lr) {
  OptimizerConfig o;
  o.kind = kind == "adam" ? OptimizerKind::kAdam : OptimizerKind::kSgd;
  if (kind != "adam" && kind != "sgd") throw std::invalid_argument("optimizer must be sgd or adam");
  o.lr = lr;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Split-learning CVR training with a label clean room";

  m.def(
      "generate",
      [](uint64_t seed, size_t n, size_t d, double base_rate, const std::string& domain,
         double domain_shift, const std::string& split) {
        GeneratorConfig g;
        g.seed = seed;
        g.n = n;
        g.d = d;
        g.base_rate = base_rate;
        g.domain = domain;
        g.domain_shift = domain_shift;
        g.split = split;
        return from_dataset(generate(g));
      },
      py::arg("seed") = 0, py::arg("n") = 1000, py::arg("d") = 32, py::arg("base_rate") = 0.05,
      py::arg("domain") = "pretrain", py::arg("domain_shift") = 0.0, py::arg("split") = "train");

  py::class_<AdaptedModel>(m, "Model")
      .def(py::init([](size_t input_dim, std::vector<size_t> hidden, uint64_t seed) {
             return AdaptedModel(make_base_model(input_dim, hidden, seed));
           }),
           py::arg("input_dim"), py::arg("hidden") = std::vector<size_t>{64, 32},
           py::arg("seed") = 0)
      .def_static("load", [](const std::string& path) { return load_model(path); })
      .def("save", [](const AdaptedModel& self, const std::string& path) { save_model(self, path); })
      .def("freeze", &AdaptedModel::freeze)
      .def("unfreeze", &AdaptedModel::unfreeze)
      .def_property_readonly("frozen", [](const AdaptedModel& self) { return self.base().frozen; })
      .def_property_readonly("base_param_count",
                             [](const AdaptedModel& self) { return self.base().param_count(); })
      .def("adapter_ids", &AdaptedModel::adapter_ids)
      .def(
          "add_adapter",
          [](AdaptedModel& self, const std::string& id, std::vector<size_t> layers, size_t rank,
             std::optional<double> alpha, uint64_t seed, double up_init_stddev) {
            AdapterSpec spec;
            spec.layers = std::move(layers);
            if (spec.layers.empty()) {
              for (size_t l = 0; l < self.base().layers.size(); ++l) spec.layers.push_back(l);
            }
            spec.rank = rank;
            spec.alpha = alpha;
            spec.seed = seed;
            spec.up_init_stddev = up_init_stddev;
            self.add_adapter(id, spec);
          },
          py::arg("id"), py::arg("layers") = std::vector<size_t>{}, py::arg("rank") = 1,
          py::arg("alpha") = std::nullopt, py::arg("seed") = 0, py::arg("up_init_stddev") = 0.0)
      .def("set_gate", &AdaptedModel::set_gate)
      .def("param_count",
           [](const AdaptedModel& self, const std::string& id) { return self.layout(id).param_count; })
      .def("params",
           [](const AdaptedModel& self, const std::string& id) {
             return from_vector(self.flatten_params(id).values);
           })
      .def("set_params", [](AdaptedModel& self, const std::string& id,
                            const Array& v) { self.set_params(id, to_vec(v)); })
      .def(
          "forward",
          [](const AdaptedModel& self, const Array& x, std::optional<std::string> adapter) {
            const DenseMatrix xm = to_matrix(x);
            return from_vector(adapter ? forward(self, *adapter, xm) : forward(self.base(), xm));
          },
          py::arg("x"), py::arg("adapter") = std::nullopt)
      .def("per_sample_grads",
           [](const AdaptedModel& self, const std::string& id, const Array& x) {
             return from_matrix(per_sample_grads(self, id, to_matrix(x)).g);
           })
      .def("contracted_grad", [](const AdaptedModel& self, const std::string& id,
                                 const Array& x, const Array& w) {
        return from_vector(contracted_grad(self, id, to_matrix(x), to_vec(w)));
      });

  m.def("keep_prob", &keep_prob, py::arg("epsilon"));
  m.def(
      "flip_labels",
      [](const ByteArray& y, double q, uint64_t seed) {
        return from_vector(flip_labels(to_bytes(y), q, seed).labels);
      },
      py::arg("labels"), py::arg("keep_prob"), py::arg("seed") = 0);
  m.def(
      "loss_and_grad",
      [](const Array& logits, const ByteArray& y, std::optional<double> debias_q) {
        const LossMode mode = debias_q ? LossMode::debias(*debias_q) : LossMode::plain();
        const auto z = to_vec(logits);
        const auto labels = to_bytes(y);
        return py::make_tuple(loss(z, labels, mode),
                              from_vector(loss_grad_wrt_logit(z, labels, mode)));
      },
      py::arg("logits"), py::arg("labels"), py::arg("debias_keep_prob") = std::nullopt);

  m.def(
      "codec_roundtrip",
      [](const Array& g, const std::string& codec, uint64_t seed) {
        Codec c = parse_codec(codec);
        c.seed = seed;
        const CompressedGrads enc = encode(PerSampleGrads{to_matrix(g)}, c);
        return py::make_tuple(from_matrix(decode(enc).g), enc.payload.size());
      },
      py::arg("grads"), py::arg("codec"), py::arg("seed") = 0);
  m.def("wire_bytes", [](uint64_t b, uint64_t f, const std::string& codec) {
    return wire_bytes(b, f, parse_codec(codec));
  });

  m.def("roc_auc", [](const Array& s, const ByteArray& y) { return roc_auc(to_vec(s), to_bytes(y)); });
  m.def("calibration_ratio",
        [](const Array& p, double base_rate) { return calibration_ratio(to_vec(p), base_rate); });
  m.def("log_loss", [](const Array& p, const ByteArray& y) { return log_loss(to_vec(p), to_bytes(y)); });
  m.def(
      "evaluate",
      [](const AdaptedModel& model, const py::dict& data, std::optional<std::string> adapter) {
        return eval_dict(evaluate(model, adapter, to_dataset(data)));
      },
      py::arg("model"), py::arg("data"), py::arg("adapter") = std::nullopt);

  m.def("recover_labels", [](const Array& g, const Array& agg, const Array& p, const ByteArray& y) {
    const RecoveredLabels r =
        recover_labels(PerSampleGrads{to_matrix(g)}, to_vec(agg), to_vec(p), to_bytes(y));
    py::dict d;
    d["labels"] = from_vector(r.labels);
    d["accuracy"] = r.report.accuracy;
    d["residual"] = r.report.residual;
    d["regime"] = std::string(regime_name(r.report.regime));
    d["degenerate"] = r.report.degenerate;
    return d;
  });
  m.def(
      "leakage_csv",
      [](std::vector<size_t> batch_sizes, const std::string& codec, std::vector<double> epsilons,
         size_t repeats, uint64_t seed) {
        LeakageSweepConfig cfg;
        cfg.batch_sizes = std::move(batch_sizes);
        cfg.codec = parse_codec(codec);
        cfg.epsilons = std::move(epsilons);
        cfg.repeats = repeats;
        cfg.seed = seed;
        return leakage_csv(leakage_sweep(cfg));
      },
      py::arg("batch_sizes") = std::vector<size_t>{}, py::arg("codec") = "none",
      py::arg("epsilons") = std::vector<double>{0.0}, py::arg("repeats") = 3,
      py::arg("seed") = 0);

  m.def(
      "split_train",
      [](AdaptedModel& model, const std::string& adapter_id, const py::dict& data,
         size_t batch_size, size_t epochs, const std::string& codec, double epsilon, bool debias,
         const std::string& optimizer, double lr, uint64_t seed) {
        const Dataset full = to_dataset(data);
        if (!full.has_labels()) throw std::invalid_argument("split_train: data needs labels");
        SplitTrainConfig cfg;
        cfg.codec = parse_codec(codec);
        cfg.dp = epsilon > 0.0 ? PrivacyBudget::label_dp(epsilon) : PrivacyBudget::off();
        cfg.debias = debias;
        cfg.report_loss = true;
        cfg.session_seed = seed;
        cfg.optimizer = make_optimizer(optimizer, lr);
        cfg.options.batch_size = batch_size;
        cfg.options.epochs = epochs;
        cfg.options.shuffle_seed = seed;

        // Labels stay on the clean-room side of an in-process loopback.
        LabelStore labels = LabelStore::from_pairs(full.sample_ids, full.labels);
        if (epsilon > 0.0) labels.apply_label_dp(keep_prob(epsilon), seed);
        Dataset features = full;
        features.labels.clear();
        ServerConfig server;
        server.dp = cfg.dp;
        server.debias = debias;

        TrainReport report;
        {
          py::gil_scoped_release release;
          auto [client, peer] = make_loopback_pair();
          std::thread t([&, end = peer.get()] { cleanroom_serve(labels, server, *end); });
          try {
            report = split_train(model, adapter_id, features, cfg, *client);
          } catch (...) {
            client->close();
            t.join();
            throw;
          }
          client->close();
          t.join();
        }
        return to_json(report, false);
      },
      py::arg("model"), py::arg("adapter_id"), py::arg("data"), py::arg("batch_size") = 256,
      py::arg("epochs") = 1, py::arg("codec") = "none", py::arg("epsilon") = 0.0,
      py::arg("debias") = false, py::arg("optimizer") = "adam", py::arg("lr") = 0.01,
      py::arg("seed") = 0);

  m.attr("__version__") = "0.1.0";
}
