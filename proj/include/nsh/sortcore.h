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

// Softmax relaxation of descending argsort.
//
// For scores s of length n, row j of the relaxed permutation is
//
//   P[j, :] = softmax(-|sorted_desc(s)[j] - s| / tau)
//
// so row j puts its mass on the positions whose score is closest to the
// j-th largest score. As tau -> 0, P approaches the hard permutation matrix
// with P[j, order[j]] = 1.

#ifndef NSH_SORTCORE_H_
#define NSH_SORTCORE_H_

#include <cstddef>
#include <span>
#include <vector>

#include "nsh/numerics.h"

namespace nsh {

struct HardPerm {
  // indices[j] = position in the input of the j-th output row.
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  bool is_bijection() const;
  HardPerm inverse() const;
  // Dense 0/1 matrix with M[j, indices[j]] = 1.
  Mat to_matrix() const;
};

struct SoftSortResult {
  Mat perm;                    // n x n, row-stochastic
  std::vector<double> scores;  // input s
  std::vector<double> sorted;  // s sorted descending
  HardPerm order;              // sorted[j] == scores[order.indices[j]]
  double tau = 1.0;
};

// Stable: equal values keep their original relative order.
HardPerm hard_argsort_desc(std::span<const double> s);

SoftSortResult softsort_forward(std::span<const double> s, double tau);

// Gradient of a scalar loss w.r.t. s given dL/dP. Covers both the direct
// dependence on s and the dependence routed through the sorted values.
std::vector<double> softsort_backward(const SoftSortResult& res,
                                      const Mat& dl_dperm);

// Row j of the result is row p.indices[j] of z.
Mat apply_perm_hard(const HardPerm& p, const Mat& z);

}  // namespace nsh

#endif  // NSH_SORTCORE_H_
