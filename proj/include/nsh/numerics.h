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

// Dense row-major matrices, a replayable RNG and the finite-difference
// gradient oracle used to verify every hand-written backward pass.

#ifndef NSH_NUMERICS_H_
#define NSH_NUMERICS_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nsh {

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::initializer_list<std::initializer_list<double>> init);

  static Mat FromData(std::size_t rows, std::size_t cols,
                      std::vector<double> data);
  static Mat Identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Mat transpose() const;
  bool all_finite() const;
  std::string shape_str() const;

  Mat& operator+=(const Mat& other);
  Mat& operator*=(double k);

  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Three-index array; element (i, j, k) lives at ((i * d1) + j) * d2 + k.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, double fill = 0.0)
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  std::size_t d0() const { return d0_; }
  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d1_ + j) * d2_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d1_ + j) * d2_ + k];
  }

  std::span<double> slice_span(std::size_t i) {
    return {data_.data() + i * d1_ * d2_, d1_ * d2_};
  }
  std::span<const double> slice_span(std::size_t i) const {
    return {data_.data() + i * d1_ * d2_, d1_ * d2_};
  }
  Mat slice(std::size_t i) const;
  void set_slice(std::size_t i, const Mat& m);

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const Tensor3& a, const Tensor3& b) = default;

 private:
  std::size_t d0_ = 0;
  std::size_t d1_ = 0;
  std::size_t d2_ = 0;
  std::vector<double> data_;
};

// Counter-based generator: output k is a pure function of (seed, k), so any
// sequence of calls replays identically on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();
  // Uniform integer on [0, bound).
  std::uint64_t below(std::uint64_t bound);

  // Independent stream keyed by (seed, stream); does not advance this one.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t Mix64(std::uint64_t x);

Mat matmul(const Mat& a, const Mat& b);
// a * b^T without materializing the transpose.
Mat matmul_nt(const Mat& a, const Mat& b);
// a^T * b without materializing the transpose.
Mat matmul_tn(const Mat& a, const Mat& b);

Mat softmax_rows(const Mat& m, double tau);

// Rows with norm below `eps` are returned unchanged.
Mat l2_normalize_rows(const Mat& m, double eps = 1e-12);

Mat pairwise_cosine(const Mat& a, const Mat& b);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences, one coordinate at a time.
std::vector<double> central_diff_grad(const ScalarFn& f,
                                      std::span<const double> x,
                                      double eps = 1e-5);

Mat gaussian_batch(Rng& rng, std::size_t rows, std::size_t cols, double mean,
                   double stddev);

// max_i |a_i - b_i| / max(max_i |b_i|, floor). Used by gradient checks.
double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8);

void require_finite(const Mat& m, const char* name);

}  // namespace nsh

#endif  // NSH_NUMERICS_H_
