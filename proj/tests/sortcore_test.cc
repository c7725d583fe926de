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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nsh/errors.h"

namespace nsh {
namespace {

std::vector<double> RandomScores(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.normal();
  return s;
}

std::size_t RowArgmax(const Mat& m, std::size_t r) {
  const auto row = m.row(r);
  return static_cast<std::size_t>(
      std::max_element(row.begin(), row.end()) - row.begin());
}

TEST(HardArgsortTest, DescendingAndStable) {
  const std::vector<double> s = {0.9, 0.1, 0.5};
  EXPECT_EQ(hard_argsort_desc(s).indices, (std::vector<std::size_t>{0, 2, 1}));
  const std::vector<double> ties = {1.0, 2.0, 1.0, 2.0};
  EXPECT_EQ(hard_argsort_desc(ties).indices,
            (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(HardPermTest, InverseAndMatrix) {
  HardPerm p{{2, 0, 1}};
  EXPECT_TRUE(p.is_bijection());
  EXPECT_EQ(p.inverse().indices, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(p.to_matrix(), (Mat{{0, 0, 1}, {1, 0, 0}, {0, 1, 0}}));
  EXPECT_FALSE((HardPerm{{0, 0}}).is_bijection());
}

TEST(SoftsortForwardTest, TwoElementExample) {
  const std::vector<double> s = {1.0, 0.0};
  const Mat p = softsort_forward(s, 1.0).perm;
  EXPECT_NEAR(p(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(p(1, 0), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(p(1, 1), 0.7310585786300049, 1e-12);
}

TEST(SoftsortForwardTest, EqualEntriesGiveUniformRows) {
  const std::vector<double> s(4, 0.3);
  for (double tau : {1e-3, 1.0, 50.0}) {
    const Mat p = softsort_forward(s, tau).perm;
    for (double v : p.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(SoftsortForwardTest, HardensAtLowTemperature) {
  const std::vector<double> s = {0.9, 0.1, 0.5};
  const SoftSortResult r = softsort_forward(s, 1e-3);
  const Mat hard = hard_argsort_desc(s).to_matrix();
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_EQ(RowArgmax(r.perm, j), r.order.indices[j]);
  for (std::size_t i = 0; i < hard.size(); ++i)
    EXPECT_LT(std::abs(r.perm.values()[i] - hard.values()[i]), 1e-3);
}

TEST(SoftsortForwardTest, RejectsBadInput) {
  const std::vector<double> s = {1.0, 2.0};
  EXPECT_THROW(softsort_forward(s, 0.0), ParameterError);
  EXPECT_THROW(softsort_forward(s, -2.0), ParameterError);
  EXPECT_THROW(softsort_forward(std::vector<double>{}, 1.0), ParameterError);
}

TEST(SoftsortForwardTest, RowStochastic) {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto s = RandomScores(rng, 2 + rng.below(8));
    const Mat p = softsort_forward(s, 0.05 + rng.uniform()).perm;
    for (std::size_t j = 0; j < p.rows(); ++j) {
      const auto row = p.row(j);
      EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(SoftsortForwardTest, ColumnPermutationEquivariance) {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 3 + rng.below(6);
    const auto s = RandomScores(rng, n);
    std::vector<std::size_t> pi(n);
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(pi[i], pi[rng.below(i + 1)]);
    std::vector<double> permuted(n);
    for (std::size_t k = 0; k < n; ++k) permuted[k] = s[pi[k]];
    const Mat p = softsort_forward(s, 0.3).perm;
    const Mat q = softsort_forward(permuted, 0.3).perm;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(q(j, k), p(j, pi[k]), 1e-12);
  }
}

TEST(SoftsortForwardTest, ShiftInvariance) {
  Rng rng(23);
  for (int t = 0; t < 50; ++t) {
    auto s = RandomScores(rng, 6);
    const Mat p = softsort_forward(s, 0.4).perm;
    const double c = 10.0 * rng.normal();
    for (double& v : s) v += c;
    const Mat q = softsort_forward(s, 0.4).perm;
    for (std::size_t i = 0; i < p.size(); ++i)
      EXPECT_NEAR(p.values()[i], q.values()[i], 1e-12);
  }
}

TEST(SoftsortForwardTest, PositiveScaleKeepsRowArgmax) {
  Rng rng(24);
  for (int t = 0; t < 50; ++t) {
    auto s = RandomScores(rng, 7);
    const Mat p = softsort_forward(s, 0.5).perm;
    const double k = 0.1 + 5.0 * rng.uniform();
    for (double& v : s) v *= k;
    const Mat q = softsort_forward(s, 0.5).perm;
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(RowArgmax(p, j), RowArgmax(q, j));
  }
}

// Scalar probe L = sum(P .* W) for a fixed weight matrix W.
double Probe(std::span<const double> s, double tau, const Mat& w) {
  const Mat p = softsort_forward(s, tau).perm;
  double out = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) out += p.values()[i] * w.values()[i];
  return out;
}

TEST(SoftsortBackwardTest, ZeroUpstreamGivesZero) {
  const std::vector<double> s = {0.2, -1.0, 0.7};
  const auto g = softsort_backward(softsort_forward(s, 0.5), Mat(3, 3));
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(SoftsortBackwardTest, MatchesCentralDifferences) {
  Rng rng(25);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + rng.below(6);
    const auto s = RandomScores(rng, n);
    const double tau = 0.2 + rng.uniform();
    const Mat w = gaussian_batch(rng, n, n, 0.0, 1.0);
    const auto analytic = softsort_backward(softsort_forward(s, tau), w);
    const auto numeric = central_diff_grad(
        [&](std::span<const double> x) { return Probe(x, tau, w); }, s);
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4) << "instance " << t;
  }
}

TEST(SoftsortBackwardTest, ShiftInvariantLossHasZeroSumGradient) {
  Rng rng(26);
  for (int t = 0; t < 20; ++t) {
    const auto s = RandomScores(rng, 5);
    const Mat w = gaussian_batch(rng, 5, 5, 0.0, 1.0);
    const auto g = softsort_backward(softsort_forward(s, 0.7), w);
    EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 0.0, 1e-9);
  }
}

TEST(SoftsortBackwardTest, ShapeMismatch) {
  const std::vector<double> s = {1.0, 2.0};
  EXPECT_THROW(softsort_backward(softsort_forward(s, 1.0), Mat(3, 3)),
               ShapeError);
}

TEST(ApplyPermHardTest, Examples) {
  const Mat z{{1, 2}, {3, 4}};
  EXPECT_EQ(apply_perm_hard(HardPerm{{0, 1}}, z), z);
  EXPECT_EQ(apply_perm_hard(HardPerm{{1, 0}}, z), (Mat{{3, 4}, {1, 2}}));
  EXPECT_THROW(apply_perm_hard(HardPerm{{0, 1, 2}}, z), ShapeError);
}

TEST(ApplyPermHardTest, InverseRoundTrip) {
  Rng rng(27);
  const Mat z = gaussian_batch(rng, 9, 4, 0.0, 1.0);
  const HardPerm p = hard_argsort_desc(RandomScores(rng, 9));
  EXPECT_EQ(apply_perm_hard(p.inverse(), apply_perm_hard(p, z)), z);
}

}  // namespace
}  // namespace nsh
