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

#include "cvr/model.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <stdexcept>

#include "cvr/common.h"

namespace cvr {
namespace {

constexpr char kCheckpointMagic[4] = {'C', 'V', 'R', 'M'};
constexpr uint8_t kCheckpointVersion = 1;

void check_input(const BaseModel& base, const DenseMatrix& x) {
  if (x.cols() != base.input_dim()) {
    throw std::invalid_argument("forward: input has " +
                                std::to_string(x.cols()) +
                                " columns, model expects " +
                                std::to_string(base.input_dim()));
  }
  if (!x.all_finite()) throw std::invalid_argument("forward: non-finite input");
}

// Per-layer view of the adapter attached there, or null.
std::vector<const AdapterLayer*> route(const BaseModel& base,
                                       const LoraAdapter* adapter) {
  std::vector<const AdapterLayer*> out(base.layers.size(), nullptr);
  if (adapter == nullptr) return out;
  for (const auto& al : adapter->layers) {
    if (al.gate) out[al.layer_index] = &al;
  }
  return out;
}

void matvec(const DenseMatrix& m, std::span<const double> v,
            std::span<double> out) {
  for (size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double acc = 0.0;
    for (size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
}

// out += m^T v
void matvec_t_add(const DenseMatrix& m, std::span<const double> v,
                  std::span<double> out) {
  for (size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double vr = v[r];
    if (vr == 0.0) continue;
    for (size_t c = 0; c < row.size(); ++c) out[c] += row[c] * vr;
  }
}

// Activations recorded for one sample. pre[l] is the pre-activation of layer
// l, act[l] its input (act[0] = x), low[l] = A_l act[l] when an adapter is
// active on layer l.
struct Tape {
  std::vector<std::vector<double>> act;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> low;
};

double run_forward(const BaseModel& base,
                   std::span<const AdapterLayer* const> routes,
                   std::span<const double> x, Tape* tape) {
  const size_t n_layers = base.layers.size();
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> u;
  if (tape) {
    tape->act.resize(n_layers);
    tape->pre.resize(n_layers);
    tape->low.assign(n_layers, {});
  }
  for (size_t l = 0; l < n_layers; ++l) {
    const Layer& layer = base.layers[l];
    u.assign(layer.out_dim(), 0.0);
    matvec(layer.weight, a, u);
    for (size_t j = 0; j < u.size(); ++j) u[j] += layer.bias[j];
    if (const AdapterLayer* al = routes[l]) {
      std::vector<double> t(al->rank);
      matvec(al->down, a, t);
      std::vector<double> bt(layer.out_dim());
      matvec(al->up, t, bt);
      const double s = al->scale();
      for (size_t j = 0; j < u.size(); ++j) u[j] += s * bt[j];
      if (tape) tape->low[l] = std::move(t);
    }
    if (tape) {
      tape->act[l] = a;
      tape->pre[l] = u;
    }
    if (layer.activation == Activation::kRelu) {
      for (double& v : u) v = v > 0.0 ? v : 0.0;
    }
    a.swap(u);
  }
  return a[0];
}

// Back-propagates `seed` (dL/dz for this sample) through the tape. Adapter
// gradients are added into `adapter_out` (layout order); base gradients into
// `base_out` when non-null.
void run_backward(const BaseModel& base,
                  std::span<const AdapterLayer* const> routes,
                  const ParamLayout* layout, const Tape& tape, double seed,
                  std::span<double> adapter_out, std::span<double> base_out) {
  const size_t n_layers = base.layers.size();
  std::vector<size_t> slot_of(n_layers, SIZE_MAX);
  if (layout) {
    for (size_t k = 0; k < layout->slots.size(); ++k) {
      slot_of[layout->slots[k].layer_index] = k;
    }
  }
  std::vector<size_t> base_offset;
  if (!base_out.empty()) {
    base_offset.resize(n_layers);
    size_t off = 0;
    for (size_t l = 0; l < n_layers; ++l) {
      base_offset[l] = off;
      off += base.layers[l].weight.size() + base.layers[l].bias.size();
    }
  }

  std::vector<double> delta{seed};
  for (size_t l = n_layers; l-- > 0;) {
    const Layer& layer = base.layers[l];
    const auto& a = tape.act[l];
    if (!base_out.empty()) {
      double* gw = base_out.data() + base_offset[l];
      for (size_t r = 0; r < layer.out_dim(); ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        for (size_t c = 0; c < layer.in_dim(); ++c) gw[r * layer.in_dim() + c] += d * a[c];
      }
      double* gb = gw + layer.weight.size();
      for (size_t r = 0; r < layer.out_dim(); ++r) gb[r] += delta[r];
    }

    std::vector<double> grad_in;
    if (l > 0) {
      grad_in.assign(layer.in_dim(), 0.0);
      matvec_t_add(layer.weight, delta, grad_in);
    }

    if (const AdapterLayer* al = routes[l]) {
      const double s = al->scale();
      const auto& t = tape.low[l];
      // v = s * B^T delta
      std::vector<double> v(al->rank, 0.0);
      matvec_t_add(al->up, delta, v);
      for (double& x : v) x *= s;
      if (layout && slot_of[l] != SIZE_MAX) {
        const ParamSlot& slot = layout->slots[slot_of[l]];
        double* ga = adapter_out.data() + slot.offset;
        for (size_t r = 0; r < al->rank; ++r) {
          if (v[r] == 0.0) continue;
          for (size_t c = 0; c < slot.in_dim; ++c) ga[r * slot.in_dim + c] += v[r] * a[c];
        }
        double* gb = ga + slot.rank * slot.in_dim;
        for (size_t r = 0; r < slot.out_dim; ++r) {
          const double sd = s * delta[r];
          if (sd == 0.0) continue;
          for (size_t c = 0; c < slot.rank; ++c) gb[r * slot.rank + c] += sd * t[c];
        }
      }
      if (l > 0) matvec_t_add(al->down, v, grad_in);
    }

    if (l == 0) break;
    const auto& prev_pre = tape.pre[l - 1];
    if (base.layers[l - 1].activation == Activation::kRelu) {
      for (size_t j = 0; j < grad_in.size(); ++j) {
        if (!(prev_pre[j] > 0.0)) grad_in[j] = 0.0;
      }
    }
    delta = std::move(grad_in);
  }
}

void write_matrix(ByteWriter& w, const DenseMatrix& m) {
  for (double v : m.values()) w.f64(v);
}

DenseMatrix read_matrix(ByteReader& r, size_t rows, size_t cols) {
  if (rows != 0 && cols > r.remaining() / 8 / rows) {
    throw ProtocolError("checkpoint: truncated matrix");
  }
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = r.f64();
  return m;
}

}  // namespace

size_t BaseModel::param_count() const {
  size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void BaseModel::validate() const {
  if (layers.empty()) throw std::invalid_argument("BaseModel: no layers");
  for (size_t l = 0; l < layers.size(); ++l) {
    const Layer& layer = layers[l];
    if (layer.bias.size() != layer.out_dim()) {
      throw std::invalid_argument("BaseModel: bias size mismatch at layer " +
                                  std::to_string(l));
    }
    if (l > 0 && layer.in_dim() != layers[l - 1].out_dim()) {
      throw std::invalid_argument("BaseModel: layer " + std::to_string(l) +
                                  " does not chain to its predecessor");
    }
    const bool last = l + 1 == layers.size();
    if (last != (layer.activation == Activation::kIdentity)) {
      throw std::invalid_argument(
          "BaseModel: only the logit head may use the identity activation");
    }
  }
  if (layers.back().out_dim() != 1) {
    throw std::invalid_argument("BaseModel: head must emit a scalar logit");
  }
}

BaseModel make_base_model(size_t input_dim, std::span<const size_t> hidden,
                          uint64_t seed) {
  if (input_dim == 0) throw std::invalid_argument("make_base_model: input_dim 0");
  std::mt19937_64 rng(mix_seed(seed, 0x6d6f64656cULL));
  BaseModel base;
  size_t in = input_dim;
  std::vector<size_t> outs(hidden.begin(), hidden.end());
  outs.push_back(1);
  for (size_t l = 0; l < outs.size(); ++l) {
    const bool head = l + 1 == outs.size();
    const size_t out = outs[l];
    if (out == 0) throw std::invalid_argument("make_base_model: zero width");
    std::normal_distribution<double> init(
        0.0, std::sqrt((head ? 1.0 : 2.0) / static_cast<double>(in)));
    Layer layer;
    layer.weight = DenseMatrix(out, in);
    for (double& v : layer.weight.values()) v = init(rng);
    layer.bias.assign(out, 0.0);
    layer.activation = head ? Activation::kIdentity : Activation::kRelu;
    base.layers.push_back(std::move(layer));
    in = out;
  }
  return base;
}

const AdapterLayer* LoraAdapter::find(size_t layer_index) const {
  for (const auto& l : layers) {
    if (l.layer_index == layer_index) return &l;
  }
  return nullptr;
}

AdaptedModel::AdaptedModel(BaseModel base) : base_(std::move(base)) {
  base_.validate();
}

BaseModel& AdaptedModel::mutable_base() {
  if (base_.frozen) {
    throw std::logic_error("AdaptedModel: base weights are frozen");
  }
  return base_;
}

bool AdaptedModel::has_adapter(std::string_view id) const {
  return adapters_.find(id) != adapters_.end();
}

const LoraAdapter& AdaptedModel::adapter(std::string_view id) const {
  auto it = adapters_.find(id);
  if (it == adapters_.end()) {
    throw std::invalid_argument("unknown adapter_id '" + std::string(id) + "'");
  }
  return it->second;
}

LoraAdapter& AdaptedModel::mutable_adapter(std::string_view id) {
  auto it = adapters_.find(id);
  if (it == adapters_.end()) {
    throw std::invalid_argument("unknown adapter_id '" + std::string(id) + "'");
  }
  return it->second;
}

std::vector<std::string> AdaptedModel::adapter_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : adapters_) ids.push_back(id);
  return ids;
}

void AdaptedModel::validate_adapter(const LoraAdapter& adapter) const {
  if (adapter.id.empty()) throw std::invalid_argument("adapter id is empty");
  if (adapter.layers.empty()) {
    throw std::invalid_argument("adapter '" + adapter.id + "' has no layers");
  }
  for (size_t k = 0; k < adapter.layers.size(); ++k) {
    const AdapterLayer& al = adapter.layers[k];
    if (al.layer_index >= base_.layers.size()) {
      throw std::invalid_argument("adapter '" + adapter.id +
                                  "' attaches to missing layer " +
                                  std::to_string(al.layer_index));
    }
    if (k > 0 && al.layer_index <= adapter.layers[k - 1].layer_index) {
      throw std::invalid_argument("adapter layers must be strictly ascending");
    }
    const Layer& layer = base_.layers[al.layer_index];
    if (al.rank < 1) {
      throw std::invalid_argument(
          "adapter rank " + std::to_string(al.rank) + " invalid for layer " +
          std::to_string(al.layer_index) + " (" +
          std::to_string(layer.in_dim()) + "->" +
          std::to_string(layer.out_dim()) + ")");
    }
    if (!(al.alpha > 0.0) || !std::isfinite(al.alpha)) {
      throw std::invalid_argument("adapter alpha must be positive");
    }
    if (al.down.rows() != al.rank || al.down.cols() != layer.in_dim() ||
        al.up.rows() != layer.out_dim() || al.up.cols() != al.rank) {
      throw std::invalid_argument("adapter shapes do not match layer " +
                                  std::to_string(al.layer_index));
    }
  }
}

const LoraAdapter& AdaptedModel::add_adapter(const std::string& id,
                                             const AdapterSpec& spec) {
  if (has_adapter(id)) {
    throw std::invalid_argument("adapter '" + id + "' already exists");
  }
  std::vector<size_t> layers = spec.layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());

  std::mt19937_64 rng(mix_seed(spec.seed, std::hash<std::string>{}(id)));
  std::normal_distribution<double> down_init(
      0.0, std::sqrt(1.0 / static_cast<double>(std::max<size_t>(spec.rank, 1))));
  std::normal_distribution<double> up_init(0.0, spec.up_init_stddev > 0.0
                                                    ? spec.up_init_stddev
                                                    : 1.0);
  LoraAdapter adapter;
  adapter.id = id;
  for (size_t index : layers) {
    if (index >= base_.layers.size()) {
      throw std::invalid_argument("adapter '" + id + "' attaches to missing layer " +
                                  std::to_string(index));
    }
    const Layer& layer = base_.layers[index];
    AdapterLayer al;
    al.layer_index = index;
    al.rank = spec.rank;
    al.alpha = spec.alpha.value_or(static_cast<double>(spec.rank));
    al.gate = true;
    if (spec.rank < 1) {
      throw std::invalid_argument(
          "adapter rank " + std::to_string(spec.rank) + " invalid for layer " +
          std::to_string(index));
    }
    al.down = DenseMatrix(spec.rank, layer.in_dim());
    for (double& v : al.down.values()) v = down_init(rng);
    al.up = DenseMatrix(layer.out_dim(), spec.rank);
    if (spec.up_init_stddev > 0.0) {
      for (double& v : al.up.values()) v = up_init(rng);
    }
    adapter.layers.push_back(std::move(al));
  }
  validate_adapter(adapter);
  auto [it, _] = adapters_.emplace(id, std::move(adapter));
  return it->second;
}

void AdaptedModel::insert_adapter(LoraAdapter adapter) {
  validate_adapter(adapter);
  if (has_adapter(adapter.id)) {
    throw std::invalid_argument("adapter '" + adapter.id + "' already exists");
  }
  std::string id = adapter.id;
  adapters_.emplace(std::move(id), std::move(adapter));
}

void AdaptedModel::set_gate(std::string_view id, size_t layer_index, bool gate) {
  LoraAdapter& adapter = mutable_adapter(id);
  for (auto& al : adapter.layers) {
    if (al.layer_index == layer_index) {
      al.gate = gate;
      return;
    }
  }
  throw std::invalid_argument("adapter '" + std::string(id) +
                              "' is not attached to layer " +
                              std::to_string(layer_index));
}

ParamLayout AdaptedModel::layout(std::string_view id) const {
  const LoraAdapter& adapter = this->adapter(id);
  ParamLayout layout;
  for (const auto& al : adapter.layers) {
    ParamSlot slot;
    slot.layer_index = al.layer_index;
    slot.rank = al.rank;
    slot.in_dim = al.down.cols();
    slot.out_dim = al.up.rows();
    slot.offset = layout.param_count;
    layout.param_count += slot.size();
    layout.slots.push_back(slot);
  }
  return layout;
}

ParamVector AdaptedModel::flatten_params(std::string_view id) const {
  const LoraAdapter& adapter = this->adapter(id);
  ParamVector pv;
  pv.adapter_id = adapter.id;
  pv.layout = layout(id);
  pv.values.reserve(pv.layout.param_count);
  for (const auto& al : adapter.layers) {
    auto a = al.down.values();
    auto b = al.up.values();
    pv.values.insert(pv.values.end(), a.begin(), a.end());
    pv.values.insert(pv.values.end(), b.begin(), b.end());
  }
  return pv;
}

void AdaptedModel::apply_update(std::string_view id,
                                std::span<const double> delta) {
  LoraAdapter& adapter = mutable_adapter(id);
  const size_t n = layout(id).param_count;
  if (delta.size() != n) {
    throw std::invalid_argument("apply_update: delta length " +
                                std::to_string(delta.size()) + " != " +
                                std::to_string(n));
  }
  for (double v : delta) {
    if (!std::isfinite(v)) throw std::invalid_argument("apply_update: non-finite delta");
  }
  size_t k = 0;
  for (auto& al : adapter.layers) {
    for (double& v : al.down.values()) v += delta[k++];
    for (double& v : al.up.values()) v += delta[k++];
  }
}

void AdaptedModel::set_params(std::string_view id,
                              std::span<const double> values) {
  LoraAdapter& adapter = mutable_adapter(id);
  const size_t n = layout(id).param_count;
  if (values.size() != n) {
    throw std::invalid_argument("set_params: length mismatch");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("set_params: non-finite value");
  }
  size_t k = 0;
  for (auto& al : adapter.layers) {
    for (double& v : al.down.values()) v = values[k++];
    for (double& v : al.up.values()) v = values[k++];
  }
}

std::vector<double> forward(const BaseModel& base, const DenseMatrix& x) {
  check_input(base, x);
  auto routes = route(base, nullptr);
  std::vector<double> z(x.rows());
  for (size_t i = 0; i < x.rows(); ++i) z[i] = run_forward(base, routes, x.row(i), nullptr);
  return z;
}

std::vector<double> forward(const AdaptedModel& model, const DenseMatrix& x) {
  return forward(model.base(), x);
}

std::vector<double> forward(const AdaptedModel& model,
                            std::string_view adapter_id, const DenseMatrix& x) {
  const LoraAdapter& adapter = model.adapter(adapter_id);
  check_input(model.base(), x);
  auto routes = route(model.base(), &adapter);
  std::vector<double> z(x.rows());
  for (size_t i = 0; i < x.rows(); ++i) {
    z[i] = run_forward(model.base(), routes, x.row(i), nullptr);
  }
  return z;
}

std::vector<double> forward(
    const AdaptedModel& model,
    std::span<const std::optional<std::string>> adapter_sel,
    const DenseMatrix& x) {
  if (adapter_sel.size() != x.rows()) {
    throw std::invalid_argument("forward: adapter selection length != batch size");
  }
  check_input(model.base(), x);
  std::map<std::string, std::vector<const AdapterLayer*>, std::less<>> cache;
  const auto base_routes = route(model.base(), nullptr);
  std::vector<double> z(x.rows());
  for (size_t i = 0; i < x.rows(); ++i) {
    const std::vector<const AdapterLayer*>* routes = &base_routes;
    if (adapter_sel[i]) {
      auto it = cache.find(*adapter_sel[i]);
      if (it == cache.end()) {
        it = cache.emplace(*adapter_sel[i],
                           route(model.base(), &model.adapter(*adapter_sel[i])))
                 .first;
      }
      routes = &it->second;
    }
    z[i] = run_forward(model.base(), *routes, x.row(i), nullptr);
  }
  return z;
}

PerSampleGrads per_sample_grads(const AdaptedModel& model,
                                std::string_view adapter_id,
                                const DenseMatrix& x) {
  const LoraAdapter& adapter = model.adapter(adapter_id);
  check_input(model.base(), x);
  const ParamLayout layout = model.layout(adapter_id);
  const auto routes = route(model.base(), &adapter);
  PerSampleGrads out{DenseMatrix(x.rows(), layout.param_count)};
  Tape tape;
  for (size_t i = 0; i < x.rows(); ++i) {
    run_forward(model.base(), routes, x.row(i), &tape);
    run_backward(model.base(), routes, &layout, tape, 1.0, out.g.row(i), {});
  }
  return out;
}

std::vector<double> contracted_grad(const AdaptedModel& model,
                                    std::string_view adapter_id,
                                    const DenseMatrix& x,
                                    std::span<const double> weights) {
  if (weights.size() != x.rows()) {
    throw std::invalid_argument("contracted_grad: weights length != batch size");
  }
  const LoraAdapter& adapter = model.adapter(adapter_id);
  check_input(model.base(), x);
  const ParamLayout layout = model.layout(adapter_id);
  const auto routes = route(model.base(), &adapter);
  std::vector<double> out(layout.param_count, 0.0);
  Tape tape;
  for (size_t i = 0; i < x.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    run_forward(model.base(), routes, x.row(i), &tape);
    run_backward(model.base(), routes, &layout, tape, weights[i], out, {});
  }
  return out;
}

std::vector<double> flatten_base(const BaseModel& base) {
  std::vector<double> out;
  out.reserve(base.param_count());
  for (const auto& layer : base.layers) {
    auto w = layer.weight.values();
    out.insert(out.end(), w.begin(), w.end());
    out.insert(out.end(), layer.bias.begin(), layer.bias.end());
  }
  return out;
}

void apply_base_update(BaseModel& base, std::span<const double> delta) {
  if (base.frozen) throw std::logic_error("apply_base_update: base is frozen");
  if (delta.size() != base.param_count()) {
    throw std::invalid_argument("apply_base_update: delta length mismatch");
  }
  size_t k = 0;
  for (auto& layer : base.layers) {
    for (double& v : layer.weight.values()) v += delta[k++];
    for (double& v : layer.bias) v += delta[k++];
  }
}

std::vector<double> base_contracted_grad(const BaseModel& base,
                                         const DenseMatrix& x,
                                         std::span<const double> weights) {
  if (weights.size() != x.rows()) {
    throw std::invalid_argument("base_contracted_grad: weights length != batch size");
  }
  check_input(base, x);
  const auto routes = route(base, nullptr);
  std::vector<double> out(base.param_count(), 0.0);
  Tape tape;
  for (size_t i = 0; i < x.rows(); ++i) {
    if (weights[i] == 0.0) continue;
    run_forward(base, routes, x.row(i), &tape);
    run_backward(base, routes, nullptr, tape, weights[i], {}, out);
  }
  return out;
}

std::array<uint8_t, 32> model_signature(const ParamLayout& layout) {
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>("cvr-layout-v1"), 13});
  w.u64(layout.param_count);
  w.u32(static_cast<uint32_t>(layout.slots.size()));
  for (const auto& s : layout.slots) {
    w.u32(static_cast<uint32_t>(s.layer_index));
    w.u32(static_cast<uint32_t>(s.in_dim));
    w.u32(static_cast<uint32_t>(s.out_dim));
    w.u32(static_cast<uint32_t>(s.rank));
  }
  return sha256(w.buffer());
}

std::vector<uint8_t> serialize_model(const AdaptedModel& model) {
  const BaseModel& base = model.base();
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kCheckpointMagic), 4});
  w.u8(kCheckpointVersion);
  w.u8(base.frozen ? 1 : 0);
  w.u32(static_cast<uint32_t>(base.layers.size()));
  w.u32(static_cast<uint32_t>(base.input_dim()));
  for (const auto& layer : base.layers) w.u32(static_cast<uint32_t>(layer.out_dim()));
  for (const auto& layer : base.layers) {
    write_matrix(w, layer.weight);
    for (double b : layer.bias) w.f64(b);
  }
  const auto ids = model.adapter_ids();
  w.u32(static_cast<uint32_t>(ids.size()));
  for (const auto& id : ids) {
    const LoraAdapter& adapter = model.adapter(id);
    w.str(adapter.id);
    w.u32(static_cast<uint32_t>(adapter.layers.size()));
    for (const auto& al : adapter.layers) {
      w.u32(static_cast<uint32_t>(al.layer_index));
      w.u32(static_cast<uint32_t>(al.rank));
      w.f64(al.alpha);
      w.u8(al.gate ? 1 : 0);
      write_matrix(w, al.down);
      write_matrix(w, al.up);
    }
  }
  return w.take();
}

AdaptedModel deserialize_model(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) {
    throw ProtocolError("checkpoint: bad magic");
  }
  if (r.u8() != kCheckpointVersion) throw ProtocolError("checkpoint: unsupported version");
  const bool frozen = r.u8() != 0;
  const uint32_t n_layers = r.u32();
  if (n_layers == 0 || n_layers > 1024) throw ProtocolError("checkpoint: bad layer count");
  std::vector<size_t> dims{r.u32()};
  for (uint32_t l = 0; l < n_layers; ++l) dims.push_back(r.u32());
  BaseModel base;
  base.frozen = frozen;
  for (uint32_t l = 0; l < n_layers; ++l) {
    Layer layer;
    layer.weight = read_matrix(r, dims[l + 1], dims[l]);
    layer.bias.resize(dims[l + 1]);
    for (double& b : layer.bias) b = r.f64();
    layer.activation = l + 1 == n_layers ? Activation::kIdentity : Activation::kRelu;
    base.layers.push_back(std::move(layer));
  }
  AdaptedModel model(std::move(base));
  const uint32_t n_adapters = r.u32();
  for (uint32_t k = 0; k < n_adapters; ++k) {
    LoraAdapter adapter;
    adapter.id = r.str();
    const uint32_t n_attached = r.u32();
    for (uint32_t j = 0; j < n_attached; ++j) {
      AdapterLayer al;
      al.layer_index = r.u32();
      al.rank = r.u32();
      al.alpha = r.f64();
      al.gate = r.u8() != 0;
      if (al.layer_index >= n_layers) throw ProtocolError("checkpoint: bad adapter layer");
      al.down = read_matrix(r, al.rank, dims[al.layer_index]);
      al.up = read_matrix(r, dims[al.layer_index + 1], al.rank);
      adapter.layers.push_back(std::move(al));
    }
    model.insert_adapter(std::move(adapter));
  }
  if (r.remaining() != 0) throw ProtocolError("checkpoint: trailing bytes");
  return model;
}

void save_model(const AdaptedModel& model, const std::filesystem::path& path) {
  auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

AdaptedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace cvr
