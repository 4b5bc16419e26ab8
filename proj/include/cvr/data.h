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

// Synthetic conversion data and dataset files.
//
// Labels are Bernoulli(sigmoid(teacher(x) + offset)) for a random frozen
// teacher network; the advertiser domain perturbs the teacher weights by
// domain_shift. The offset is bisected on the realized draws so the sample
// hits the target base rate.
//
// On disk a dataset is two artifacts: a feature file (no labels) for the
// feature party and a "sample_id,label" CSV for the clean room.

#ifndef CVR_DATA_H_
#define CVR_DATA_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cvr/matrix.h"
#include "cvr/model.h"

namespace cvr {

struct Dataset {
  std::string domain = "pretrain";  // "pretrain" or an advertiser/adapter id
  std::vector<uint64_t> sample_ids;
  DenseMatrix features;
  std::vector<uint8_t> labels;  // empty for a feature-only load

  size_t size() const { return sample_ids.size(); }
  bool has_labels() const { return !labels.empty(); }
  double base_rate() const;
  // Unique ids, matching lengths, binary labels, finite features.
  void validate() const;
  Dataset subset(std::span<const size_t> rows) const;
};

// SHA-256 over domain, ids, features and labels.
std::string dataset_digest(const Dataset& data);

struct GeneratorConfig {
  uint64_t seed = 0;
  size_t n = 1000;
  size_t d = 32;
  std::vector<size_t> teacher_widths = {64, 32};
  double base_rate = 0.05;
  double domain_shift = 0.0;
  // Standard deviation of the teacher logit before the offset.
  double signal_scale = 3.0;
  std::string domain = "pretrain";
  std::string split = "train";
};

inline constexpr double kBaseRateTolerance = 0.005;

Dataset generate(const GeneratorConfig& cfg);

// The (scaled, pre-offset) teacher score for cfg.domain. Depends only on the
// seed, dims, domain and shift, not on n or split.
std::vector<double> teacher_scores(const GeneratorConfig& cfg, const DenseMatrix& x);

// Writes <prefix>.features.bin and <prefix>.labels.csv.
struct DatasetFiles {
  std::filesystem::path features;
  std::filesystem::path labels;
};
DatasetFiles dataset_files(const std::filesystem::path& prefix);
DatasetFiles save(const Dataset& data, const std::filesystem::path& prefix);
// Features and labels joined by sample_id.
Dataset load(const std::filesystem::path& prefix);
Dataset load_features(const std::filesystem::path& path);
std::vector<std::pair<uint64_t, uint8_t>> load_labels_csv(const std::filesystem::path& path);
void save_labels_csv(std::span<const uint64_t> ids, std::span<const uint8_t> labels,
                     const std::filesystem::path& path);

struct Batch {
  std::vector<uint64_t> sample_ids;
  DenseMatrix features;
  std::vector<uint8_t> labels;  // only filled for local (oracle) training
};

// Shuffled partition of [0, n) into batches of exactly b rows for one epoch;
// the trailing partial batch is dropped.
std::vector<std::vector<size_t>> epoch_batches(size_t n, size_t batch_size,
                                               uint64_t seed, size_t epoch);

Batch make_batch(const Dataset& data, std::span<const size_t> rows,
                 bool with_labels);

}  // namespace cvr

#endif  // CVR_DATA_H_
