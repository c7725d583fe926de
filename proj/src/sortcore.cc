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

#include "nsh/sortcore.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nsh/errors.h"

namespace nsh {
namespace {

double Sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace

bool HardPerm::is_bijection() const {
  std::vector<bool> seen(indices.size(), false);
  for (std::size_t idx : indices) {
    if (idx >= indices.size() || seen[idx]) return false;
    seen[idx] = true;
  }
  return true;
}

HardPerm HardPerm::inverse() const {
  HardPerm inv;
  inv.indices.resize(indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) inv.indices[indices[j]] = j;
  return inv;
}

Mat HardPerm::to_matrix() const {
  Mat m(indices.size(), indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) m(j, indices[j]) = 1.0;
  return m;
}

HardPerm hard_argsort_desc(std::span<const double> s) {
  HardPerm p;
  p.indices.resize(s.size());
  std::iota(p.indices.begin(), p.indices.end(), std::size_t{0});
  std::stable_sort(p.indices.begin(), p.indices.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return p;
}

SoftSortResult softsort_forward(std::span<const double> s, double tau) {
  if (!(tau > 0.0)) {
    throw ParameterError("softsort_forward: temperature must be positive, got " +
                         std::to_string(tau));
  }
  if (s.empty()) throw ParameterError("softsort_forward: empty score vector");
  const std::size_t n = s.size();
  SoftSortResult res;
  res.tau = tau;
  res.scores.assign(s.begin(), s.end());
  res.order = hard_argsort_desc(s);
  res.sorted.resize(n);
  for (std::size_t j = 0; j < n; ++j) res.sorted[j] = s[res.order.indices[j]];

  Mat logits(n, n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k)
      logits(j, k) = -std::abs(res.sorted[j] - s[k]);
  res.perm = softmax_rows(logits, tau);
  return res;
}

std::vector<double> softsort_backward(const SoftSortResult& res,
                                      const Mat& dl_dperm) {
  const std::size_t n = res.scores.size();
  if (dl_dperm.rows() != n || dl_dperm.cols() != n) {
    throw ShapeError("softsort_backward: upstream gradient " +
                     dl_dperm.shape_str() + " does not match " +
                     res.perm.shape_str());
  }
  std::vector<double> grad(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto p = res.perm.row(j);
    auto g = dl_dperm.row(j);
    double inner = 0.0;
    for (std::size_t k = 0; k < n; ++k) inner += p[k] * g[k];
    const double top = res.sorted[j];
    double to_sorted = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      // Softmax Jacobian applied to the row, then d(-|top - s_k|/tau).
      const double dlogit = p[k] * (g[k] - inner) / res.tau;
      const double sgn = Sign(top - res.scores[k]);
      grad[k] += dlogit * sgn;
      to_sorted -= dlogit * sgn;
    }
    grad[res.order.indices[j]] += to_sorted;
  }
  return grad;
}

Mat apply_perm_hard(const HardPerm& p, const Mat& z) {
  if (p.size() != z.rows()) {
    throw ShapeError("apply_perm_hard: permutation of length " +
                     std::to_string(p.size()) + " applied to " +
                     z.shape_str());
  }
  Mat out(z.rows(), z.cols());
  for (std::size_t j = 0; j < p.size(); ++j) {
    auto src = z.row(p.indices[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

}  // namespace nsh
