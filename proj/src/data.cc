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

#include "cvr/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "cvr/common.h"
#include "cvr/privacy.h"

namespace cvr {
namespace {

constexpr char kFeatureMagic[4] = {'C', 'V', 'R', 'D'};
constexpr uint8_t kFeatureVersion = 1;
constexpr size_t kReferenceSamples = 4096;
constexpr int kMaxGenerateAttempts = 5;

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

DenseMatrix standard_normal(size_t n, size_t d, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  DenseMatrix x(n, d);
  // Rounded through float32 so feature files round-trip exactly.
  for (double& v : x.values()) v = static_cast<float>(nd(rng));
  return x;
}

struct Teacher {
  BaseModel net;
  double scale = 1.0;
};

Teacher make_teacher(const GeneratorConfig& cfg, uint64_t attempt) {
  Teacher t;
  const uint64_t seed = mix_seed(cfg.seed, 0x7465616368ULL + attempt);
  t.net = make_base_model(cfg.d, cfg.teacher_widths, seed);
  if (cfg.domain != "pretrain" && cfg.domain_shift > 0.0) {
    std::mt19937_64 rng(mix_seed(seed, fnv1a(cfg.domain)));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& layer : t.net.layers) {
      const double init_sd =
          std::sqrt((layer.activation == Activation::kRelu ? 2.0 : 1.0) /
                    static_cast<double>(layer.in_dim()));
      for (double& w : layer.weight.values()) w += cfg.domain_shift * init_sd * nd(rng);
    }
  }
  // Normalize the score spread on a fixed reference sample from the
  // pretrain teacher so every domain shares one scale.
  GeneratorConfig ref_cfg = cfg;
  ref_cfg.domain = "pretrain";
  const BaseModel ref_net =
      cfg.domain == "pretrain" ? t.net : make_base_model(cfg.d, cfg.teacher_widths, seed);
  const DenseMatrix ref = standard_normal(kReferenceSamples, cfg.d, mix_seed(seed, 0x726566ULL));
  const auto z = forward(ref_net, ref);
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.size());
  t.scale = var > 0.0 ? cfg.signal_scale / std::sqrt(var) : 0.0;
  return t;
}

size_t positives_at(std::span<const double> scores, std::span<const double> u,
                    double offset) {
  size_t n = 0;
  for (size_t i = 0; i < scores.size(); ++i) n += u[i] < sigmoid(scores[i] + offset);
  return n;
}

}  // namespace

double Dataset::base_rate() const {
  if (labels.empty()) return 0.0;
  size_t pos = 0;
  for (uint8_t y : labels) pos += y;
  return static_cast<double>(pos) / static_cast<double>(labels.size());
}

void Dataset::validate() const {
  if (features.rows() != sample_ids.size()) {
    throw std::invalid_argument("dataset: feature rows != id count");
  }
  if (!labels.empty() && labels.size() != sample_ids.size()) {
    throw std::invalid_argument("dataset: label count != id count");
  }
  for (uint8_t y : labels) {
    if (y > 1) throw std::invalid_argument("dataset: labels must be 0 or 1");
  }
  std::unordered_set<uint64_t> seen;
  seen.reserve(sample_ids.size());
  for (uint64_t id : sample_ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("dataset: duplicate sample_id " + std::to_string(id));
    }
  }
  if (!features.all_finite()) throw std::invalid_argument("dataset: non-finite feature");
}

Dataset Dataset::subset(std::span<const size_t> rows) const {
  Dataset out;
  out.domain = domain;
  out.features = DenseMatrix(rows.size(), features.cols());
  for (size_t k = 0; k < rows.size(); ++k) {
    out.sample_ids.push_back(sample_ids.at(rows[k]));
    std::copy_n(features.row(rows[k]).begin(), features.cols(), out.features.row(k).begin());
    if (has_labels()) out.labels.push_back(labels[rows[k]]);
  }
  return out;
}

std::string dataset_digest(const Dataset& data) {
  ByteWriter w;
  w.str(data.domain);
  w.u64(data.size());
  w.u32(static_cast<uint32_t>(data.features.cols()));
  for (uint64_t id : data.sample_ids) w.u64(id);
  for (double v : data.features.values()) w.f64(v);
  w.u8(data.has_labels() ? 1 : 0);
  w.bytes(data.labels);
  return sha256_hex(w.buffer());
}

std::vector<double> teacher_scores(const GeneratorConfig& cfg, const DenseMatrix& x) {
  const Teacher t = make_teacher(cfg, 0);
  auto z = forward(t.net, x);
  for (double& v : z) v *= t.scale;
  return z;
}

Dataset generate(const GeneratorConfig& cfg) {
  if (cfg.n == 0 || cfg.d == 0) throw std::invalid_argument("generate: n and d must be positive");
  if (!(cfg.base_rate > 0.0 && cfg.base_rate < 0.5)) {
    throw std::invalid_argument("generate: base_rate must lie in (0, 0.5)");
  }
  if (!(cfg.domain_shift >= 0.0)) throw std::invalid_argument("generate: domain_shift < 0");
  if (cfg.domain.empty()) throw std::invalid_argument("generate: empty domain");

  const uint64_t stream = mix_seed(cfg.seed, fnv1a(cfg.domain + "/" + cfg.split));
  for (int attempt = 0; attempt < kMaxGenerateAttempts; ++attempt) {
    const Teacher teacher = make_teacher(cfg, static_cast<uint64_t>(attempt));
    const uint64_t sub = mix_seed(stream, static_cast<uint64_t>(attempt));
    Dataset data;
    data.domain = cfg.domain;
    data.features = standard_normal(cfg.n, cfg.d, mix_seed(sub, 1));
    auto scores = forward(teacher.net, data.features);
    for (double& v : scores) v *= teacher.scale;

    std::vector<double> u(cfg.n);
    std::mt19937_64 rng(mix_seed(sub, 2));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (double& v : u) v = unif(rng);

    const size_t target = static_cast<size_t>(std::llround(cfg.base_rate * cfg.n));
    double lo = -60.0, hi = 60.0;
    if (positives_at(scores, u, lo) > target || positives_at(scores, u, hi) < target) {
      continue;  // cannot bracket; try another teacher draw
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (positives_at(scores, u, mid) < target) lo = mid; else hi = mid;
    }
    const double offset = hi;
    data.labels.resize(cfg.n);
    for (size_t i = 0; i < cfg.n; ++i) {
      data.labels[i] = u[i] < sigmoid(scores[i] + offset) ? 1 : 0;
    }
    if (std::abs(data.base_rate() - cfg.base_rate) > kBaseRateTolerance) continue;

    const uint64_t id_base = (fnv1a(cfg.domain + "/" + cfg.split + "/" +
                                    std::to_string(cfg.seed)) & 0xffffffffULL) << 32;
    data.sample_ids.resize(cfg.n);
    for (size_t i = 0; i < cfg.n; ++i) data.sample_ids[i] = id_base | i;
    return data;
  }
  throw std::runtime_error("generate: could not reach base rate " +
                           std::to_string(cfg.base_rate) + " after " +
                           std::to_string(kMaxGenerateAttempts) + " attempts");
}

DatasetFiles dataset_files(const std::filesystem::path& prefix) {
  return {prefix.string() + ".features.bin", prefix.string() + ".labels.csv"};
}

void save_labels_csv(std::span<const uint64_t> ids, std::span<const uint8_t> labels,
                     const std::filesystem::path& path) {
  if (ids.size() != labels.size()) throw std::invalid_argument("save_labels_csv: length mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sample_id,label\n";
  for (size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << int(labels[i]) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

DatasetFiles save(const Dataset& data, const std::filesystem::path& prefix) {
  data.validate();
  const DatasetFiles files = dataset_files(prefix);
  ByteWriter w;
  w.bytes({reinterpret_cast<const uint8_t*>(kFeatureMagic), 4});
  w.u8(kFeatureVersion);
  w.str(data.domain);
  w.u64(data.size());
  w.u32(static_cast<uint32_t>(data.features.cols()));
  for (uint64_t id : data.sample_ids) w.u64(id);
  for (double v : data.features.values()) w.f32(static_cast<float>(v));
  {
    std::ofstream out(files.features, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + files.features.string());
    out.write(reinterpret_cast<const char*>(w.buffer().data()),
              static_cast<std::streamsize>(w.size()));
    if (!out) throw std::runtime_error("write failed: " + files.features.string());
  }
  if (data.has_labels()) save_labels_csv(data.sample_ids, data.labels, files.labels);
  return files;
}

Dataset load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kFeatureMagic)) {
    throw ProtocolError("feature file: bad magic");
  }
  if (r.u8() != kFeatureVersion) throw ProtocolError("feature file: unsupported version");
  Dataset data;
  data.domain = r.str();
  const uint64_t n = r.u64();
  const uint32_t d = r.u32();
  if (d == 0 || n > r.remaining() / (8 + 4ULL * d)) {
    throw ProtocolError("feature file: truncated");
  }
  data.sample_ids.resize(n);
  for (uint64_t& id : data.sample_ids) id = r.u64();
  data.features = DenseMatrix(n, d);
  for (double& v : data.features.values()) v = r.f32();
  if (r.remaining() != 0) throw ProtocolError("feature file: trailing bytes");
  data.validate();
  return data;
}

std::vector<std::pair<uint64_t, uint8_t>> load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::pair<uint64_t, uint8_t>> out;
  std::unordered_set<uint64_t> seen;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line == "sample_id,label") continue;
    const auto comma = line.find(',');
    auto bad = [&] {
      return ProtocolError(path.string() + ":" + std::to_string(line_no) +
                           ": expected 'sample_id,label'");
    };
    if (comma == std::string::npos) throw bad();
    uint64_t id = 0;
    const char* first = line.data();
    auto [p1, ec1] = std::from_chars(first, first + comma, id);
    if (ec1 != std::errc() || p1 != first + comma) throw bad();
    const std::string label = line.substr(comma + 1);
    if (label != "0" && label != "1") throw bad();
    if (!seen.insert(id).second) {
      throw ProtocolError(path.string() + ": duplicate sample_id " + std::to_string(id));
    }
    out.emplace_back(id, static_cast<uint8_t>(label[0] - '0'));
  }
  return out;
}

Dataset load(const std::filesystem::path& prefix) {
  const DatasetFiles files = dataset_files(prefix);
  Dataset data = load_features(files.features);
  const auto pairs = load_labels_csv(files.labels);
  std::unordered_map<uint64_t, uint8_t> by_id(pairs.begin(), pairs.end());
  if (by_id.size() != data.size()) {
    throw ProtocolError("label file has " + std::to_string(by_id.size()) +
                        " rows, feature file " + std::to_string(data.size()));
  }
  data.labels.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    auto it = by_id.find(data.sample_ids[i]);
    if (it == by_id.end()) {
      throw ProtocolError("no label for sample_id " + std::to_string(data.sample_ids[i]));
    }
    data.labels[i] = it->second;
  }
  return data;
}

std::vector<std::vector<size_t>> epoch_batches(size_t n, size_t batch_size,
                                               uint64_t seed, size_t epoch) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch size must be positive");
  if (batch_size > n) {
    throw std::invalid_argument("batches: batch size " + std::to_string(batch_size) +
                                " exceeds dataset size " + std::to_string(n));
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x65706f6368ULL + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<size_t>> out;
  for (size_t start = 0; start + batch_size <= n; start += batch_size) {
    out.emplace_back(order.begin() + start, order.begin() + start + batch_size);
  }
  return out;
}

Batch make_batch(const Dataset& data, std::span<const size_t> rows, bool with_labels) {
  if (with_labels && !data.has_labels()) {
    throw std::invalid_argument("make_batch: dataset has no labels");
  }
  Batch b;
  b.features = DenseMatrix(rows.size(), data.features.cols());
  b.sample_ids.reserve(rows.size());
  for (size_t k = 0; k < rows.size(); ++k) {
    b.sample_ids.push_back(data.sample_ids.at(rows[k]));
    std::copy_n(data.features.row(rows[k]).begin(), data.features.cols(),
                b.features.row(k).begin());
    if (with_labels) b.labels.push_back(data.labels[rows[k]]);
  }
  return b;
}

}  // namespace cvr
