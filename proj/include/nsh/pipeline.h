// Copyright 2026 The nshash Authors
// SPDX-License-Identifier: Apache-2.0
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

#ifndef NSH_PIPELINE_H_
#define NSH_PIPELINE_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nsh/model.h"
#include "nsh/numerics.h"

namespace nsh {

// Row-major n x width matrix of 0/1 flags.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t n, std::size_t width)
      : n_(n), width_(width), bits_(n * width, 0) {}

  std::size_t size() const { return n_; }
  std::size_t width() const { return width_; }

  std::span<const std::uint8_t> row(std::size_t i) const {
    return {bits_.data() + i * width_, width_};
  }
  std::span<std::uint8_t> row(std::size_t i) {
    return {bits_.data() + i * width_, width_};
  }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  // True when rows i of *this and j of other share at least one label.
  bool shares_label(std::size_t i, const LabelMatrix& other,
                    std::size_t j) const;

  LabelMatrix select(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

enum class Split : std::uint8_t { kTrain, kQuery, kDatabase };

struct Dataset {
  Mat features;                       // N x d_x
  std::optional<LabelMatrix> labels;  // N x L, multi-hot
  std::vector<Split> splits;          // N tags

  std::vector<std::size_t> rows_in(Split split) const;
  Dataset subset(Split split) const;
  // Rows tagged kTrain, or the kDatabase rows when nothing is tagged kTrain.
  Mat training_features() const;
};

struct AugmentConfig {
  double noise_stddev = 0.1;
  double mask_prob = 0.2;

  void validate() const;
};

// x + N(0, noise_stddev^2) noise, then each coordinate zeroed with
// probability mask_prob.
Mat augment(const Mat& x, const AugmentConfig& cfg, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams first;   // first-moment estimates
  ModelParams second;  // second-moment estimates
  std::uint64_t step = 0;
  AdamConfig cfg;

  static AdamState Init(const ModelParams& params, const AdamConfig& cfg);
};

// One bias-corrected Adam update.
void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state);

struct RunConfig {
  std::size_t d_b = 16;
  std::size_t d_z = 64;
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t batch = 50;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  AdamConfig adam;
  Variant variant = Variant::kFull;
  std::size_t m = 2;
  double tau_c = 0.1;
  std::optional<double> tau_s;  // unset means d_b
  AugmentConfig augment;

  VariantConfig variant_config() const;
  void validate() const;
};

// `key=value` lines; `#` starts a comment. Unknown keys and malformed values
// throw FormatError with the byte offset of the offending line.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::string& path);
void write_run_config(std::ostream& out, const RunConfig& cfg);

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double l_sorted = 0.0;
  double l_r = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> history;
  std::size_t batches_per_epoch = 0;
};

// Per-epoch batch order. Always a permutation of 0..count-1.
std::vector<std::size_t> epoch_order(std::size_t count, Rng& rng);

TrainResult train(const Dataset& data, const RunConfig& cfg);

// Header `step,loss,l_sorted,l_r`.
void write_loss_history(std::ostream& out,
                        const std::vector<LossRecord>& history);

struct SynthConfig {
  std::size_t k = 10;
  std::size_t per_cluster = 100;
  std::size_t d_x = 64;
  double center_stddev = 1.0;
  double cluster_stddev = 0.15;
  std::uint64_t seed = 0;
  // The first query_per_cluster items of every cluster are tagged kQuery;
  // the rest kDatabase.
  std::size_t query_per_cluster = 0;
};

// Gaussian clusters with one-hot labels.
Dataset synth_clusters(const SynthConfig& cfg);

// CSV (one row per item) or "NSHF": magic, u32 version = 1, u64 n, u64 d,
// then n * d little-endian f32.
Mat load_features(const std::string& path);
Mat read_features(std::istream& in, const std::string& what);
void save_features(const std::string& path, const Mat& features);
void write_features(std::ostream& out, const Mat& features);

// "NSHL": magic, u64 n, u32 L, then n * L bytes in {0, 1}. CSV of 0/1 also
// accepted.
LabelMatrix load_labels(const std::string& path);
LabelMatrix read_labels(std::istream& in, const std::string& what);
void save_labels(const std::string& path, const LabelMatrix& labels);
void write_labels(std::ostream& out, const LabelMatrix& labels);

}  // namespace nsh

#endif  // NSH_PIPELINE_H_
