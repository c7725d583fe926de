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

#include "nsh/model.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>

#include "binio.h"
#include "nsh/errors.h"

namespace nsh {
namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap View(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMap(s.data(), static_cast<Eigen::Index>(rows),
                  static_cast<Eigen::Index>(cols));
}
MutMap View(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MutMap(s.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}
ConstMap View(const Mat& m) {
  return View(std::span<const double>(m.values()), m.rows(), m.cols());
}
MutMap View(Mat& m) {
  return View(std::span<double>(m.values()), m.rows(), m.cols());
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

double Norm(std::span<const double> a) { return std::sqrt(Dot(a, a)); }

// Adds g * d cos(a, b) / d{a, b} to da and db.
void CosineBackward(std::span<const double> a, std::span<const double> b,
                    double norm_a, double norm_b, double cosine, double g,
                    std::span<double> da, std::span<double> db) {
  if (norm_a == 0.0 || norm_b == 0.0 || g == 0.0) return;
  const double inv = 1.0 / (norm_a * norm_b);
  const double ka = cosine / (norm_a * norm_a);
  const double kb = cosine / (norm_b * norm_b);
  for (std::size_t k = 0; k < a.size(); ++k) {
    da[k] += g * (b[k] * inv - ka * a[k]);
    db[k] += g * (a[k] * inv - kb * b[k]);
  }
}

double SafeCosine(std::span<const double> a, std::span<const double> b,
                  double norm_a, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return Dot(a, b) / (norm_a * norm_b);
}

Mat Affine(const Mat& x, const DenseLayer& layer) {
  Mat y = matmul(x, layer.weight);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
  }
  return y;
}

void AccumulateDense(const Mat& input, const Mat& d_out, DenseLayer& grad) {
  View(grad.weight).noalias() += View(input).transpose() * View(d_out);
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    auto row = d_out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) grad.bias[c] += row[c];
  }
}

DenseLayer InitLayer(std::size_t d_in, std::size_t d_out, double gain,
                     Rng& rng) {
  DenseLayer layer;
  layer.weight = gaussian_batch(rng, d_in, d_out, 0.0,
                                std::sqrt(gain / static_cast<double>(d_in)));
  layer.bias.assign(d_out, 0.0);
  return layer;
}

void CheckSameShape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

bool AllFinite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string_view VariantName(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kHardSort: return "hard_sort";
    case Variant::kNoQuant: return "no_quant";
    case Variant::kSingleBottleneck: return "single_bottleneck";
    case Variant::kNoSoftsort: return "no_softsort";
    case Variant::kMultilabelNce: return "multilabel_nce";
  }
  return "unknown";
}

Variant ParseVariant(std::string_view name) {
  for (Variant v : AllVariants())
    if (VariantName(v) == name) return v;
  throw ParameterError("unknown variant \"" + std::string(name) +
                       "\"; expected one of full, hard_sort, no_quant, "
                       "single_bottleneck, no_softsort, multilabel_nce");
}

const std::vector<Variant>& AllVariants() {
  static const std::vector<Variant> kAll = {
      Variant::kFull,         Variant::kHardSort,
      Variant::kNoQuant,      Variant::kSingleBottleneck,
      Variant::kNoSoftsort,   Variant::kMultilabelNce};
  return kAll;
}

void VariantConfig::validate(std::size_t n) const {
  if (m < 1 || m >= n) {
    throw ParameterError("positives m=" + std::to_string(m) +
                         " must satisfy 1 <= m < n=" + std::to_string(n));
  }
  if (!(tau_c > 0.0))
    throw ParameterError("tau_c must be positive, got " + std::to_string(tau_c));
  if (!(tau_s > 0.0))
    throw ParameterError("tau_s must be positive, got " + std::to_string(tau_s));
}

ModelParams ModelParams::Init(std::size_t d_x,
                              const std::vector<std::size_t>& hidden,
                              std::size_t d_b, std::size_t d_z, Rng& rng) {
  if (d_x == 0 || d_b == 0 || d_z == 0)
    throw ParameterError("ModelParams::Init: dimensions must be positive");
  ModelParams p;
  std::size_t width = d_x;
  for (std::size_t h : hidden) {
    if (h == 0) throw ParameterError("ModelParams::Init: zero hidden width");
    p.backbone.push_back(InitLayer(width, h, 2.0, rng));
    width = h;
  }
  p.hash_head = InitLayer(width, d_b, 2.0, rng);
  p.latent_head = InitLayer(width, d_z, 1.0, rng);
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (DenseLayer* layer : z.layers()) {
    std::fill(layer->weight.values().begin(), layer->weight.values().end(), 0.0);
    std::fill(layer->bias.begin(), layer->bias.end(), 0.0);
  }
  return z;
}

std::size_t ModelParams::input_dim() const {
  return backbone.empty() ? hash_head.in_dim() : backbone.front().in_dim();
}

std::size_t ModelParams::feature_dim() const {
  return backbone.empty() ? hash_head.in_dim() : backbone.back().out_dim();
}

std::vector<DenseLayer*> ModelParams::layers() {
  std::vector<DenseLayer*> out;
  for (auto& l : backbone) out.push_back(&l);
  out.push_back(&hash_head);
  out.push_back(&latent_head);
  return out;
}

std::vector<const DenseLayer*> ModelParams::layers() const {
  std::vector<const DenseLayer*> out;
  for (const auto& l : backbone) out.push_back(&l);
  out.push_back(&hash_head);
  out.push_back(&latent_head);
  return out;
}

std::size_t ModelParams::num_values() const {
  std::size_t total = 0;
  for (const DenseLayer* l : layers()) total += l->weight.size() + l->bias.size();
  return total;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(num_values());
  for (const DenseLayer* l : layers()) {
    out.insert(out.end(), l->weight.values().begin(), l->weight.values().end());
    out.insert(out.end(), l->bias.begin(), l->bias.end());
  }
  return out;
}

void ModelParams::unflatten(std::span<const double> values) {
  if (values.size() != num_values()) {
    throw ShapeError("ModelParams::unflatten: " + std::to_string(values.size()) +
                     " values for " + std::to_string(num_values()) +
                     " parameters");
  }
  std::size_t at = 0;
  for (DenseLayer* l : layers()) {
    for (double& v : l->weight.values()) v = values[at++];
    for (double& v : l->bias) v = values[at++];
  }
}

void ModelParams::validate() const {
  std::size_t width = input_dim();
  for (const auto& l : backbone) {
    if (l.in_dim() != width || l.bias.size() != l.out_dim())
      throw ShapeError("ModelParams: backbone layers do not chain");
    width = l.out_dim();
  }
  for (const DenseLayer* head : {&hash_head, &latent_head}) {
    if (head->in_dim() != width || head->bias.size() != head->out_dim())
      throw ShapeError("ModelParams: head does not match backbone width " +
                       std::to_string(width));
  }
  if (code_bits() == 0 || latent_dim() == 0)
    throw ShapeError("ModelParams: empty head");
}

bool ModelParams::all_finite() const {
  for (const DenseLayer* l : layers())
    if (!l->weight.all_finite() || !AllFinite(l->bias)) return false;
  return true;
}

TwinEncoding encode(const ModelParams& params, const Mat& x,
                    EncoderCache* cache) {
  if (x.cols() != params.input_dim()) {
    throw ShapeError("encode: input " + x.shape_str() + " but model expects " +
                     std::to_string(params.input_dim()) + " features");
  }
  Mat act = x;
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(x);
  }
  for (const auto& layer : params.backbone) {
    act = Affine(act, layer);
    for (double& v : act.values()) v = v > 0.0 ? v : 0.0;
    if (cache) cache->activations.push_back(act);
  }
  TwinEncoding enc;
  enc.h = Affine(act, params.hash_head);
  for (double& v : enc.h.values()) v = std::tanh(v);
  enc.b = sign_ste(enc.h);
  Mat z_raw = Affine(act, params.latent_head);
  enc.z = l2_normalize_rows(z_raw);
  if (cache) cache->z_raw = std::move(z_raw);
  return enc;
}

void encoder_backward(const ModelParams& params, const EncoderCache& cache,
                      const TwinEncoding& enc, const Mat& d_h, const Mat& d_z,
                      GradientSet& grads) {
  CheckSameShape(enc.h, d_h, "encoder_backward dH");
  CheckSameShape(enc.z, d_z, "encoder_backward dZ");
  const Mat& feat = cache.activations.back();

  Mat d_hpre = d_h;
  for (std::size_t i = 0; i < d_hpre.size(); ++i) {
    const double t = enc.h.values()[i];
    d_hpre.values()[i] *= 1.0 - t * t;
  }

  Mat d_zraw = d_z;
  for (std::size_t r = 0; r < d_zraw.rows(); ++r) {
    const double norm = Norm(cache.z_raw.row(r));
    if (norm < 1e-12) continue;  // normalization was skipped for this row
    auto z = enc.z.row(r);
    auto g = d_zraw.row(r);
    const double proj = Dot(z, g);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = (g[c] - z[c] * proj) / norm;
  }

  AccumulateDense(feat, d_hpre, grads.hash_head);
  AccumulateDense(feat, d_zraw, grads.latent_head);
  if (params.backbone.empty()) return;

  Mat d_feat = matmul_nt(d_hpre, params.hash_head.weight);
  d_feat += matmul_nt(d_zraw, params.latent_head.weight);
  for (std::size_t l = params.backbone.size(); l-- > 0;) {
    const Mat& out = cache.activations[l + 1];
    for (std::size_t i = 0; i < d_feat.size(); ++i)
      if (!(out.values()[i] > 0.0)) d_feat.values()[i] = 0.0;
    AccumulateDense(cache.activations[l], d_feat, grads.backbone[l]);
    if (l > 0) d_feat = matmul_nt(d_feat, params.backbone[l].weight);
  }
}

PermutationStack build_permutations(const Mat& s, double tau_s) {
  if (s.rows() != s.cols()) {
    throw ShapeError("build_permutations: similarity must be square, got " +
                     s.shape_str());
  }
  const std::size_t n = s.rows();
  PermutationStack stack;
  stack.p = Tensor3(n, n, n);
  stack.parts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    stack.parts.push_back(softsort_forward(s.row(i), tau_s));
    stack.p.set_slice(i, stack.parts.back().perm);
  }
  return stack;
}

Mat permutations_backward(const PermutationStack& stack, const Tensor3& d_p) {
  const std::size_t n = stack.parts.size();
  if (d_p.d0() != n || d_p.d1() != n || d_p.d2() != n)
    throw ShapeError("permutations_backward: gradient stack shape mismatch");
  Mat d_s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto g = softsort_backward(stack.parts[i], d_p.slice(i));
    std::copy(g.begin(), g.end(), d_s.row(i).begin());
  }
  return d_s;
}

Tensor3 soft_gather(const Tensor3& p, const Mat& z) {
  const std::size_t n = p.d0();
  if (p.d1() != z.rows() || p.d2() != z.rows()) {
    throw ShapeError("soft_gather: permutations [" + std::to_string(p.d0()) +
                     "x" + std::to_string(p.d1()) + "x" +
                     std::to_string(p.d2()) + "] vs latents " + z.shape_str());
  }
  const std::size_t rows = p.d1();
  Tensor3 e(n, rows, z.cols());
  const auto zv = View(z);
  for (std::size_t i = 0; i < n; ++i) {
    View(e.slice_span(i), rows, z.cols()).noalias() =
        View(p.slice_span(i), rows, p.d2()) * zv;
  }
  return e;
}

GatherGrads soft_gather_backward(const Tensor3& p, const Mat& z,
                                 const Tensor3& d_e) {
  const std::size_t n = p.d0();
  const std::size_t rows = p.d1();
  if (p.d2() != z.rows() || d_e.d0() != n || d_e.d1() != rows ||
      d_e.d2() != z.cols()) {
    throw ShapeError("soft_gather_backward: gradient shape mismatch");
  }
  GatherGrads g{Tensor3(n, rows, p.d2()), Mat(z.rows(), z.cols())};
  const auto zv = View(z);
  auto dz = View(g.d_z);
  for (std::size_t i = 0; i < n; ++i) {
    const auto de = View(d_e.slice_span(i), rows, z.cols());
    View(g.d_p.slice_span(i), rows, p.d2()).noalias() = de * zv.transpose();
    dz.noalias() += View(p.slice_span(i), rows, p.d2()).transpose() * de;
  }
  return g;
}

namespace {

struct ListLogits {
  std::vector<double> norms;
  std::vector<double> cosines;
  std::vector<double> logits;
};

ListLogits ComputeListLogits(const Tensor3& e, std::size_t i,
                             std::span<const double> anchor,
                             double anchor_norm, double tau_c) {
  const std::size_t rows = e.d1();
  const std::size_t d = e.d2();
  ListLogits out{std::vector<double>(rows), std::vector<double>(rows),
                 std::vector<double>(rows)};
  auto slice = e.slice_span(i);
  for (std::size_t j = 0; j < rows; ++j) {
    auto a = slice.subspan(j * d, d);
    out.norms[j] = Norm(a);
    out.cosines[j] = SafeCosine(a, anchor, out.norms[j], anchor_norm);
    out.logits[j] = out.cosines[j] / tau_c;
  }
  return out;
}

void CheckNceInputs(const Tensor3& e, const Mat& z_hat, std::size_t m,
                    double tau_c, const char* name) {
  if (e.d0() != z_hat.rows() || e.d2() != z_hat.cols()) {
    throw ShapeError(std::string(name) + ": sorted lists [" +
                     std::to_string(e.d0()) + "x" + std::to_string(e.d1()) +
                     "x" + std::to_string(e.d2()) + "] vs anchors " +
                     z_hat.shape_str());
  }
  if (m < 1 || m >= e.d1()) {
    throw ParameterError(std::string(name) + ": m=" + std::to_string(m) +
                         " must satisfy 1 <= m < " + std::to_string(e.d1()));
  }
  if (!(tau_c > 0.0)) {
    throw ParameterError(std::string(name) + ": tau_c must be positive, got " +
                         std::to_string(tau_c));
  }
}

// Routes dL/dlogit of list i back to e[i] and z_hat[i].
void ListBackward(const Tensor3& e, std::size_t i, const Mat& z_hat,
                  double anchor_norm, const ListLogits& ll,
                  const std::vector<double>& d_logit, double tau_c,
                  NceResult& res) {
  const std::size_t d = e.d2();
  auto slice = e.slice_span(i);
  auto d_slice = res.d_e.slice_span(i);
  auto anchor = z_hat.row(i);
  auto d_anchor = res.d_z_hat.row(i);
  for (std::size_t j = 0; j < ll.logits.size(); ++j) {
    CosineBackward(slice.subspan(j * d, d), anchor, ll.norms[j], anchor_norm,
                   ll.cosines[j], d_logit[j] / tau_c, d_slice.subspan(j * d, d),
                   d_anchor);
  }
}

}  // namespace

NceResult sorted_nce(const Tensor3& e, const Mat& z_hat, std::size_t m,
                     double tau_c) {
  CheckNceInputs(e, z_hat, m, tau_c, "sorted_nce");
  const std::size_t n = e.d0();
  const std::size_t rows = e.d1();
  NceResult res{0.0, Tensor3(n, rows, e.d2()), Mat(z_hat.rows(), z_hat.cols()),
                0};
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(n));
  std::vector<double> d_logit(rows);
  for (std::size_t i = 0; i < n; ++i) {
    auto anchor = z_hat.row(i);
    const double anchor_norm = Norm(anchor);
    const ListLogits ll = ComputeListLogits(e, i, anchor, anchor_norm, tau_c);
    double neg_peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = m; k < rows; ++k)
      neg_peak = std::max(neg_peak, ll.logits[k]);

    std::fill(d_logit.begin(), d_logit.end(), 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      const double peak = std::max(neg_peak, ll.logits[j]);
      const double pos = std::exp(ll.logits[j] - peak);
      double denom = pos;
      for (std::size_t k = m; k < rows; ++k)
        denom += std::exp(ll.logits[k] - peak);
      res.loss += scale * (std::log(denom) - (ll.logits[j] - peak));
      d_logit[j] += scale * (pos / denom - 1.0);
      for (std::size_t k = m; k < rows; ++k)
        d_logit[k] += scale * std::exp(ll.logits[k] - peak) / denom;
      res.term_count += 1 + (rows - m);
    }
    ListBackward(e, i, z_hat, anchor_norm, ll, d_logit, tau_c, res);
  }
  return res;
}

NceResult multilabel_nce(const Tensor3& e, const Mat& z_hat, std::size_t m,
                         double tau_c) {
  CheckNceInputs(e, z_hat, m, tau_c, "multilabel_nce");
  const std::size_t n = e.d0();
  const std::size_t rows = e.d1();
  NceResult res{0.0, Tensor3(n, rows, e.d2()), Mat(z_hat.rows(), z_hat.cols()),
                0};
  const double scale = 1.0 / static_cast<double>(n);
  std::vector<double> d_logit(rows);
  for (std::size_t i = 0; i < n; ++i) {
    auto anchor = z_hat.row(i);
    const double anchor_norm = Norm(anchor);
    const ListLogits ll = ComputeListLogits(e, i, anchor, anchor_norm, tau_c);
    const double peak = *std::max_element(ll.logits.begin(), ll.logits.end());
    double all = 0.0;
    double pos = 0.0;
    for (std::size_t k = 0; k < rows; ++k) {
      const double w = std::exp(ll.logits[k] - peak);
      all += w;
      if (k < m) pos += w;
    }
    res.loss += scale * (std::log(all) - std::log(pos));
    for (std::size_t k = 0; k < rows; ++k) {
      const double w = std::exp(ll.logits[k] - peak);
      d_logit[k] = scale * (w / all - (k < m ? w / pos : 0.0));
    }
    res.term_count += rows;
    ListBackward(e, i, z_hat, anchor_norm, ll, d_logit, tau_c, res);
  }
  return res;
}

PairContrastResult symmetric_contrast(const Mat& a, const Mat& b,
                                      double tau_c) {
  CheckSameShape(a, b, "symmetric_contrast");
  if (!(tau_c > 0.0))
    throw ParameterError("symmetric_contrast: tau_c must be positive");
  const std::size_t n = a.rows();
  std::vector<double> na(n), nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    na[i] = Norm(a.row(i));
    nb[i] = Norm(b.row(i));
  }
  Mat cosine(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cosine(i, j) = SafeCosine(a.row(i), b.row(j), na[i], nb[j]);

  PairContrastResult res{0.0, Mat(n, a.cols()), Mat(n, b.cols())};
  const double scale = 0.5 / static_cast<double>(n);
  Mat d_logit(n, n);
  // a -> b: rows of the logit matrix; b -> a: columns.
  for (int dir = 0; dir < 2; ++dir) {
    for (std::size_t i = 0; i < n; ++i) {
      auto at = [&](std::size_t j) -> double {
        return (dir == 0 ? cosine(i, j) : cosine(j, i)) / tau_c;
      };
      double peak = at(0);
      for (std::size_t j = 1; j < n; ++j) peak = std::max(peak, at(j));
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(at(j) - peak);
      res.loss += scale * (std::log(total) - (at(i) - peak));
      for (std::size_t j = 0; j < n; ++j) {
        const double g =
            scale * (std::exp(at(j) - peak) / total - (i == j ? 1.0 : 0.0));
        (dir == 0 ? d_logit(i, j) : d_logit(j, i)) += g;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      CosineBackward(a.row(i), b.row(j), na[i], nb[j], cosine(i, j),
                     d_logit(i, j) / tau_c, res.d_a.row(i), res.d_b.row(j));
  return res;
}

namespace {

void ThrowFirstNonFinite(
    std::initializer_list<std::pair<const char*, const std::vector<double>*>>
        tensors) {
  for (const auto& [name, values] : tensors) {
    if (!AllFinite(*values))
      throw NumericError(std::string("non-finite values in ") + name);
  }
  throw NumericError("non-finite loss");
}

StepResult Run(const ModelParams& params, const Mat& batch1, const Mat& batch2,
               const VariantConfig& cfg, CodeMode mode, bool want_grads) {
  CheckSameShape(batch1, batch2, "forward_backward: views");
  const std::size_t n = batch1.rows();
  cfg.validate(n);

  EncoderCache cache1, cache2;
  const TwinEncoding enc1 = encode(params, batch1, &cache1);
  const TwinEncoding enc2 = encode(params, batch2, &cache2);
  const Mat& code1 = mode == CodeMode::kSign ? enc1.b : enc1.h;
  const Mat& code2 = mode == CodeMode::kSign ? enc2.b : enc2.h;
  const Mat s = similarity_matrix(code1, code2);

  StepResult res;
  Mat d_s(n, n);
  Mat d_code1(n, code1.cols()), d_code2(n, code2.cols());
  Mat d_z1(n, enc1.z.cols()), d_z2(n, enc2.z.cols());
  Tensor3 e;
  Tensor3 p;

  switch (cfg.variant) {
    case Variant::kFull:
    case Variant::kNoQuant:
    case Variant::kSingleBottleneck:
    case Variant::kMultilabelNce: {
      const bool codes_only = cfg.variant == Variant::kSingleBottleneck;
      const Mat& gathered = codes_only ? code1 : enc1.z;
      const Mat& anchors = codes_only ? code2 : enc2.z;
      PermutationStack stack = build_permutations(s, cfg.tau_s);
      e = soft_gather(stack.p, gathered);
      NceResult nce = cfg.variant == Variant::kMultilabelNce
                          ? multilabel_nce(e, anchors, cfg.m, cfg.tau_c)
                          : sorted_nce(e, anchors, cfg.m, cfg.tau_c);
      res.l_sorted = nce.loss;
      res.nce_terms = nce.term_count;
      if (want_grads) {
        GatherGrads gg = soft_gather_backward(stack.p, gathered, nce.d_e);
        d_s = permutations_backward(stack, gg.d_p);
        (codes_only ? d_code1 : d_z1) += gg.d_z;
        (codes_only ? d_code2 : d_z2) += nce.d_z_hat;
      }
      p = std::move(stack.p);
      break;
    }
    case Variant::kHardSort: {
      const std::size_t d = enc1.z.cols();
      e = Tensor3(n, n, d);
      std::vector<HardPerm> perms;
      perms.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        perms.push_back(hard_argsort_desc(s.row(i)));
        e.set_slice(i, apply_perm_hard(perms.back(), enc1.z));
      }
      NceResult nce = sorted_nce(e, enc2.z, cfg.m, cfg.tau_c);
      res.l_sorted = nce.loss;
      res.nce_terms = nce.term_count;
      if (want_grads) {
        for (std::size_t i = 0; i < n; ++i) {
          auto d_slice = nce.d_e.slice_span(i);
          for (std::size_t j = 0; j < n; ++j) {
            auto dst = d_z1.row(perms[i].indices[j]);
            for (std::size_t k = 0; k < d; ++k) dst[k] += d_slice[j * d + k];
          }
        }
        d_z2 += nce.d_z_hat;
      }
      break;
    }
    case Variant::kNoSoftsort: {
      const Mat e1 = matmul(s, code1);
      const Mat e2 = matmul(s, code2);
      PairContrastResult pc = symmetric_contrast(e1, e2, cfg.tau_c);
      res.l_sorted = pc.loss;
      res.nce_terms = 2 * n * n;
      if (want_grads) {
        d_s = matmul_nt(pc.d_a, code1);
        d_s += matmul_nt(pc.d_b, code2);
        d_code1 += matmul_tn(s, pc.d_a);
        d_code2 += matmul_tn(s, pc.d_b);
      }
      break;
    }
  }

  std::optional<QuantizationResult> q1, q2;
  if (cfg.variant != Variant::kNoQuant) {
    q1 = quantization_loss(enc1.h, enc1.b, n);
    q2 = quantization_loss(enc2.h, enc2.b, n);
    res.l_r = q1->loss + q2->loss;
  }
  res.loss = res.l_sorted + res.l_r;

  if (!std::isfinite(res.loss)) {
    ThrowFirstNonFinite({{"H1", &enc1.h.values()},
                         {"Z1", &enc1.z.values()},
                         {"H2", &enc2.h.values()},
                         {"Z2", &enc2.z.values()},
                         {"S", &s.values()},
                         {"P", &p.values()},
                         {"E", &e.values()}});
  }
  if (!want_grads) return res;

  SimilarityGrads sg = similarity_backward(code1, code2, d_s);
  res.d_similarity = std::move(d_s);
  d_code1 += sg.d_b1;
  d_code2 += sg.d_b2;
  res.d_codes1 = std::move(sg.d_b1);
  res.d_codes2 = std::move(sg.d_b2);

  // Straight-through: dL/dH = dL/dB, plus the quantization pull on H.
  Mat d_h1 = std::move(d_code1);
  Mat d_h2 = std::move(d_code2);
  if (q1) {
    d_h1 += q1->d_h;
    d_h2 += q2->d_h;
  }
  res.grads = params.zeros_like();
  encoder_backward(params, cache1, enc1, d_h1, d_z1, res.grads);
  encoder_backward(params, cache2, enc2, d_h2, d_z2, res.grads);
  return res;
}

}  // namespace

StepResult forward_backward(const ModelParams& params, const Mat& batch1,
                            const Mat& batch2, const VariantConfig& cfg,
                            CodeMode mode) {
  return Run(params, batch1, batch2, cfg, mode, true);
}

double forward_loss(const ModelParams& params, const Mat& batch1,
                    const Mat& batch2, const VariantConfig& cfg,
                    CodeMode mode) {
  return Run(params, batch1, batch2, cfg, mode, false).loss;
}

PackedCodes encode_codes(const ModelParams& params, const Mat& x) {
  return pack_codes(encode(params, x).b);
}

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  binio::PutMagic(out, "NSHP");
  binio::PutLE<std::uint32_t>(out, 1);
  const auto layers = params.layers();
  binio::PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(layers.size()));
  for (const DenseLayer* l : layers) {
    binio::PutLE<std::uint32_t>(out, 2);
    binio::PutLE<std::uint64_t>(out, l->weight.rows());
    binio::PutLE<std::uint64_t>(out, l->weight.cols());
    for (double v : l->weight.values()) binio::PutF64(out, v);
    binio::PutLE<std::uint32_t>(out, 1);
    binio::PutLE<std::uint64_t>(out, l->bias.size());
    for (double v : l->bias) binio::PutF64(out, v);
  }
}

ModelParams read_checkpoint(std::istream& in) {
  binio::Reader r(in, "NSHP checkpoint");
  r.ExpectMagic("NSHP");
  const auto version = r.LE<std::uint32_t>();
  if (version != 1) {
    throw FormatError("NSHP checkpoint: unsupported version " +
                          std::to_string(version),
                      r.offset() - 4);
  }
  const auto count = r.LE<std::uint32_t>();
  if (count < 2) {
    throw FormatError("NSHP checkpoint: need at least 2 layers, found " +
                          std::to_string(count),
                      r.offset() - 4);
  }
  auto read_rank = [&](std::uint32_t expected) {
    const auto rank = r.LE<std::uint32_t>();
    if (rank != expected) {
      throw FormatError("NSHP checkpoint: tensor rank " + std::to_string(rank) +
                            ", expected " + std::to_string(expected),
                        r.offset() - 4);
    }
  };
  auto read_values = [&](std::vector<double>& dst) {
    r.ExpectRemaining(dst.size() * 8);
    for (double& v : dst) {
      v = r.F64();
      if (!std::isfinite(v))
        throw FormatError("NSHP checkpoint: non-finite value", r.offset() - 8);
    }
  };
  std::vector<DenseLayer> layers(count);
  for (DenseLayer& l : layers) {
    read_rank(2);
    const auto rows = r.LE<std::uint64_t>();
    const auto cols = r.LE<std::uint64_t>();
    l.weight = Mat(rows, cols);
    read_values(l.weight.values());
    read_rank(1);
    l.bias.resize(r.LE<std::uint64_t>());
    read_values(l.bias);
  }
  ModelParams p;
  p.latent_head = std::move(layers.back());
  layers.pop_back();
  p.hash_head = std::move(layers.back());
  layers.pop_back();
  p.backbone = std::move(layers);
  try {
    p.validate();
  } catch (const ShapeError& err) {
    throw FormatError(std::string("NSHP checkpoint: ") + err.what(), r.offset());
  }
  return p;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  auto out = binio::OpenOut(path);
  write_checkpoint(out, params);
}

ModelParams load_checkpoint(const std::string& path) {
  auto in = binio::OpenIn(path);
  return read_checkpoint(in);
}

}  // namespace nsh
