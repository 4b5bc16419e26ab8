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

// Dense CVR model with a frozen base network and gated low-rank adapters.
//
// Every linear layer computes
//
//   u = W a + bias + gate * (alpha / rank) * B (A a)
//
// for the adapter selected for the sample (if any). Hidden layers apply a
// rectifier; the last layer is a scalar logit head. The trainable parameters
// of an adapter are flattened layer by layer in network order, A row-major
// followed by B row-major.

#ifndef CVR_MODEL_H_
#define CVR_MODEL_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvr/matrix.h"

namespace cvr {

enum class Activation : uint8_t { kRelu = 0, kIdentity = 1 };

struct Layer {
  DenseMatrix weight;  // out_dim x in_dim
  std::vector<double> bias;
  Activation activation = Activation::kRelu;

  size_t in_dim() const { return weight.cols(); }
  size_t out_dim() const { return weight.rows(); }

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct BaseModel {
  std::vector<Layer> layers;
  bool frozen = false;

  size_t input_dim() const { return layers.empty() ? 0 : layers[0].in_dim(); }
  size_t param_count() const;
  // Throws std::invalid_argument if dimensions do not chain to a scalar head.
  void validate() const;

  friend bool operator==(const BaseModel&, const BaseModel&) = default;
};

// He-normal hidden layers, N(0, 1/d_in) head, zero biases.
BaseModel make_base_model(size_t input_dim, std::span<const size_t> hidden,
                          uint64_t seed);

struct AdapterLayer {
  size_t layer_index = 0;
  size_t rank = 1;
  double alpha = 1.0;
  bool gate = true;
  DenseMatrix down;  // A: rank x in_dim
  DenseMatrix up;    // B: out_dim x rank

  double scale() const { return alpha / static_cast<double>(rank); }

  friend bool operator==(const AdapterLayer&, const AdapterLayer&) = default;
};

struct LoraAdapter {
  std::string id;
  std::vector<AdapterLayer> layers;  // ascending layer_index

  const AdapterLayer* find(size_t layer_index) const;

  friend bool operator==(const LoraAdapter&, const LoraAdapter&) = default;
};

struct AdapterSpec {
  std::vector<size_t> layers;  // base layer indices to attach to
  size_t rank = 1;
  std::optional<double> alpha;  // defaults to rank
  uint64_t seed = 0;
  // B starts at zero unless this is positive (used by leakage audits that
  // need a generic, already-trained adapter).
  double up_init_stddev = 0.0;
};

struct ParamSlot {
  size_t layer_index = 0;
  size_t rank = 0;
  size_t in_dim = 0;
  size_t out_dim = 0;
  size_t offset = 0;  // start of A; B follows at offset + rank * in_dim

  size_t size() const { return rank * (in_dim + out_dim); }
};

struct ParamLayout {
  std::vector<ParamSlot> slots;
  size_t param_count = 0;
};

struct ParamVector {
  std::string adapter_id;
  ParamLayout layout;
  std::vector<double> values;
};

// Row i holds d z_i / d f for the active adapter's parameter layout.
struct PerSampleGrads {
  DenseMatrix g;

  size_t batch_size() const { return g.rows(); }
  size_t param_count() const { return g.cols(); }
};

class AdaptedModel {
 public:
  AdaptedModel() = default;
  explicit AdaptedModel(BaseModel base);

  const BaseModel& base() const { return base_; }
  // Only available while the base is unfrozen (pretraining, full fine-tune).
  BaseModel& mutable_base();
  void freeze() { base_.frozen = true; }
  void unfreeze() { base_.frozen = false; }

  bool has_adapter(std::string_view id) const;
  const LoraAdapter& adapter(std::string_view id) const;
  std::vector<std::string> adapter_ids() const;

  const LoraAdapter& add_adapter(const std::string& id, const AdapterSpec& spec);
  // Inserts a fully specified adapter after validating its shapes.
  void insert_adapter(LoraAdapter adapter);

  void set_gate(std::string_view id, size_t layer_index, bool gate);

  ParamLayout layout(std::string_view id) const;
  ParamVector flatten_params(std::string_view id) const;
  void apply_update(std::string_view id, std::span<const double> delta);
  void set_params(std::string_view id, std::span<const double> values);

  friend bool operator==(const AdaptedModel&, const AdaptedModel&) = default;

 private:
  LoraAdapter& mutable_adapter(std::string_view id);
  void validate_adapter(const LoraAdapter& adapter) const;

  BaseModel base_;
  std::map<std::string, LoraAdapter, std::less<>> adapters_;
};

// Base-only logits.
std::vector<double> forward(const BaseModel& base, const DenseMatrix& x);
std::vector<double> forward(const AdaptedModel& model, const DenseMatrix& x);
// Every sample routed through `adapter_id`.
std::vector<double> forward(const AdaptedModel& model,
                            std::string_view adapter_id, const DenseMatrix& x);
// Per-sample routing; std::nullopt selects the base path.
std::vector<double> forward(
    const AdaptedModel& model,
    std::span<const std::optional<std::string>> adapter_sel,
    const DenseMatrix& x);

PerSampleGrads per_sample_grads(const AdaptedModel& model,
                                std::string_view adapter_id,
                                const DenseMatrix& x);

// sum_i weights[i] * d z_i / d f, computed without materializing G.
std::vector<double> contracted_grad(const AdaptedModel& model,
                                    std::string_view adapter_id,
                                    const DenseMatrix& x,
                                    std::span<const double> weights);

// Full-parameter variants used for pretraining and the full fine-tune
// baseline. Layout: per layer, W row-major then bias.
std::vector<double> flatten_base(const BaseModel& base);
void apply_base_update(BaseModel& base, std::span<const double> delta);
std::vector<double> base_contracted_grad(const BaseModel& base,
                                         const DenseMatrix& x,
                                         std::span<const double> weights);

// SHA-256 over the adapter layout metadata.
std::array<uint8_t, 32> model_signature(const ParamLayout& layout);

// Checkpoint format "CVRM" v1, see README.
std::vector<uint8_t> serialize_model(const AdaptedModel& model);
AdaptedModel deserialize_model(std::span<const uint8_t> bytes);
void save_model(const AdaptedModel& model, const std::filesystem::path& path);
AdaptedModel load_model(const std::filesystem::path& path);

}  // namespace cvr

#endif  // CVR_MODEL_H_
