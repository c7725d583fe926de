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

// Twin-bottleneck hash encoder and the sorted contrastive objective.
//
// One training step on two augmented views X1, X2 of the same n items:
//
//   [H1, Z1] = f(X1), [H2, Z2] = f(X2), B = sign(H)
//   S        = B1 B2^T / (2 d_b) + 0.5                 code similarity
//   P[i]     = softsort(S[i, :])                       n x n per query
//   E[i]     = P[i] Z1                                 soft-gathered list
//   L        = SortedNCE(E, Z2) + quantization(H1) + quantization(H2)
//
// Every stage has a hand-written backward; gradients reach the hash head
// through dL/dP -> dL/dS -> dL/dB -> (straight-through) dL/dH.

#ifndef NSH_MODEL_H_
#define NSH_MODEL_H_

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "nsh/hashcore.h"
#include "nsh/numerics.h"
#include "nsh/sortcore.h"

namespace nsh {

enum class Variant {
  kFull,
  kHardSort,          // argsort + hard gather, no dP/dS
  kNoQuant,           // drops the quantization term
  kSingleBottleneck,  // gathers the codes instead of the latents
  kNoSoftsort,        // E1 = S B1, E2 = S B2, symmetric one-positive loss
  kMultilabelNce,     // one summed-numerator term over all n logits
};

std::string_view VariantName(Variant v);
// Throws ParameterError for unknown names.
Variant ParseVariant(std::string_view name);
const std::vector<Variant>& AllVariants();

struct VariantConfig {
  Variant variant = Variant::kFull;
  std::size_t m = 2;     // positives per sorted list
  double tau_c = 0.1;    // contrastive temperature
  double tau_s = 16.0;   // softsort temperature

  // Throws ParameterError unless 1 <= m < n and both temperatures > 0.
  void validate(std::size_t n) const;
};

// How codes enter the similarity layer.
enum class CodeMode {
  kSign,     // B = sign(H) with the straight-through backward (training)
  kRelaxed,  // B = H, making the whole graph smooth (gradient checks)
};

struct DenseLayer {
  Mat weight;                 // d_in x d_out
  std::vector<double> bias;   // d_out

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelParams {
  std::vector<DenseLayer> backbone;  // ReLU after each layer
  DenseLayer hash_head;              // tanh
  DenseLayer latent_head;            // row L2 normalization

  // Weights ~ N(0, 1/d_in) for the latent head and N(0, 2/d_in) for every
  // other layer; biases zero.
  static ModelParams Init(std::size_t d_x, const std::vector<std::size_t>& hidden,
                          std::size_t d_b, std::size_t d_z, Rng& rng);
  // Same shapes, every value zero.
  ModelParams zeros_like() const;

  std::size_t input_dim() const;
  std::size_t code_bits() const { return hash_head.out_dim(); }
  std::size_t latent_dim() const { return latent_head.out_dim(); }
  std::size_t feature_dim() const;

  // Every layer in order: backbone..., hash head, latent head.
  std::vector<DenseLayer*> layers();
  std::vector<const DenseLayer*> layers() const;

  std::size_t num_values() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  // Throws ShapeError when consecutive layer dimensions do not chain.
  void validate() const;
  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Gradients share the parameter layout.
using GradientSet = ModelParams;

struct TwinEncoding {
  Mat h;  // n x d_b, tanh outputs
  Mat b;  // n x d_b, sign(h)
  Mat z;  // n x d_z, unit rows
};

// Activations kept for the backward pass.
struct EncoderCache {
  std::vector<Mat> activations;  // [x, relu(layer 1), ..., relu(layer L)]
  Mat z_raw;                     // latent head output before normalization
};

TwinEncoding encode(const ModelParams& params, const Mat& x,
                    EncoderCache* cache = nullptr);

// Accumulates parameter gradients for upstream dL/dH and dL/dZ into `grads`.
void encoder_backward(const ModelParams& params, const EncoderCache& cache,
                      const TwinEncoding& enc, const Mat& d_h, const Mat& d_z,
                      GradientSet& grads);

struct PermutationStack {
  Tensor3 p;                          // n x n x n, slice i for query i
  std::vector<SoftSortResult> parts;  // backward cache, one per query
};

PermutationStack build_permutations(const Mat& s, double tau_s);
// dL/dS from dL/dP, one softsort backward per row.
Mat permutations_backward(const PermutationStack& stack, const Tensor3& d_p);

// e[i] = p[i] * z.
Tensor3 soft_gather(const Tensor3& p, const Mat& z);

struct GatherGrads {
  Tensor3 d_p;  // d_p[i] = d_e[i] * z^T
  Mat d_z;      // sum_i p[i]^T * d_e[i]
};
GatherGrads soft_gather_backward(const Tensor3& p, const Mat& z,
                                 const Tensor3& d_e);

struct NceResult {
  double loss = 0.0;
  Tensor3 d_e;
  Mat d_z_hat;
  // Logit terms touched by the per-positive cross-entropies.
  std::size_t term_count = 0;
};

// Positions 0..m-1 of each sorted list are positives; each positive is
// contrasted against positions m..n-1 only.
NceResult sorted_nce(const Tensor3& e, const Mat& z_hat, std::size_t m,
                     double tau_c);

// One term per query whose numerator sums the first m kappa values and whose
// denominator sums all n.
NceResult multilabel_nce(const Tensor3& e, const Mat& z_hat, std::size_t m,
                         double tau_c);

struct PairContrastResult {
  double loss = 0.0;
  Mat d_a;
  Mat d_b;
};

// Mean of the a->b and b->a one-positive contrastive losses where row i of a
// and row i of b form the positive pair.
PairContrastResult symmetric_contrast(const Mat& a, const Mat& b, double tau_c);

struct StepResult {
  double loss = 0.0;
  double l_sorted = 0.0;  // contrastive part, whichever variant
  double l_r = 0.0;       // quantization part (0 for kNoQuant)
  GradientSet grads;
  Mat d_similarity;       // dL/dS
  Mat d_codes1;           // dL/dB1 through the similarity layer
  Mat d_codes2;           // dL/dB2 through the similarity layer
  std::size_t nce_terms = 0;
};

StepResult forward_backward(const ModelParams& params, const Mat& batch1,
                            const Mat& batch2, const VariantConfig& cfg,
                            CodeMode mode = CodeMode::kSign);

// Loss only; shares the forward code with forward_backward.
double forward_loss(const ModelParams& params, const Mat& batch1,
                    const Mat& batch2, const VariantConfig& cfg,
                    CodeMode mode = CodeMode::kSign);

// Packs sign(H) of every row; no sorting or batching is involved.
PackedCodes encode_codes(const ModelParams& params, const Mat& x);

// "NSHP" checkpoint: magic, u32 version = 1, u32 layer count, then for each
// layer its weight and bias as (u32 rank, u64 dims..., f64 values...).
void write_checkpoint(std::ostream& out, const ModelParams& params);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace nsh

#endif  // NSH_MODEL_H_
