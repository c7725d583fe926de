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

#include "nsh/numerics.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "nsh/errors.h"

namespace nsh {
namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap AsEigen(const Mat& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

MutMap AsEigen(Mat& m) {
  return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

[[noreturn]] void ThrowShape(const char* op, const Mat& a, const Mat& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() +
                   " and " + b.shape_str());
}

}  // namespace

Mat::Mat(std::initializer_list<std::initializer_list<double>> init) {
  rows_ = init.size();
  cols_ = rows_ == 0 ? 0 : init.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : init) {
    if (r.size() != cols_) throw ShapeError("Mat: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::FromData(std::size_t rows, std::size_t cols,
                  std::vector<double> data) {
  if (data.size() != rows * cols) {
    throw ShapeError("Mat::FromData: " + std::to_string(data.size()) +
                     " values for shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Mat m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  return m;
}

Mat Mat::Identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Mat::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

Mat& Mat::operator+=(const Mat& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    ThrowShape("Mat::operator+=", *this, other);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double k) {
  for (double& v : data_) v *= k;
  return *this;
}

Mat Tensor3::slice(std::size_t i) const {
  auto s = slice_span(i);
  return Mat::FromData(d1_, d2_, std::vector<double>(s.begin(), s.end()));
}

void Tensor3::set_slice(std::size_t i, const Mat& m) {
  if (m.rows() != d1_ || m.cols() != d2_) {
    throw ShapeError("Tensor3::set_slice: slice " + m.shape_str() +
                     " does not fit [" + std::to_string(d1_) + "x" +
                     std::to_string(d2_) + "]");
  }
  std::copy(m.values().begin(), m.values().end(), slice_span(i).begin());
}

std::uint64_t Mix64(std::uint64_t x) {
  // SplitMix64 finalizer.
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return Mix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ParameterError("Rng::below: bound must be positive");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = ~0ULL - (~0ULL % bound);
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % bound;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(Mix64(seed_ ^ Mix64(stream + 0x632be59bd9b4e019ULL)));
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) ThrowShape("matmul", a, b);
  Mat out(a.rows(), b.cols());
  if (a.cols() > 0) AsEigen(out).noalias() = AsEigen(a) * AsEigen(b);
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) ThrowShape("matmul_nt", a, b);
  Mat out(a.rows(), b.rows());
  if (a.cols() > 0)
    AsEigen(out).noalias() = AsEigen(a) * AsEigen(b).transpose();
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) ThrowShape("matmul_tn", a, b);
  Mat out(a.cols(), b.cols());
  if (a.rows() > 0)
    AsEigen(out).noalias() = AsEigen(a).transpose() * AsEigen(b);
  return out;
}

Mat softmax_rows(const Mat& m, double tau) {
  if (!(tau > 0.0)) {
    throw ParameterError("softmax_rows: temperature must be positive, got " +
                         std::to_string(tau));
  }
  Mat out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto dst = out.row(r);
    if (in.empty()) continue;
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp((in[c] - peak) / tau);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

Mat l2_normalize_rows(const Mat& m, double eps) {
  Mat out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm < eps || norm == 0.0) continue;
    for (double& v : row) v /= norm;
  }
  return out;
}

Mat pairwise_cosine(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) ThrowShape("pairwise_cosine", a, b);
  Mat dots = matmul_nt(a, b);
  std::vector<double> na(a.rows()), nb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v * v;
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < b.rows(); ++j) {
    double s = 0.0;
    for (double v : b.row(j)) s += v * v;
    nb[j] = std::sqrt(s);
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double denom = na[i] * nb[j];
      dots(i, j) = denom > 0.0 ? dots(i, j) / denom : 0.0;
    }
  }
  return dots;
}

std::vector<double> central_diff_grad(const ScalarFn& f,
                                      std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw ParameterError("central_diff_grad: eps must be > 0");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(probe);
    probe[i] = saved - eps;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError("central_diff_grad: non-finite objective at coordinate " +
                        std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Mat gaussian_batch(Rng& rng, std::size_t rows, std::size_t cols, double mean,
                   double stddev) {
  if (stddev < 0.0) throw ParameterError("gaussian_batch: stddev must be >= 0");
  Mat out(rows, cols, mean);
  if (stddev == 0.0) return out;
  for (double& v : out.values()) v = mean + stddev * rng.normal();
  return out;
}

double max_relative_error(std::span<const double> a, std::span<const double> b,
                          double floor) {
  if (a.size() != b.size()) {
    throw ShapeError("max_relative_error: lengths " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  double scale = floor;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst / scale;
}

void require_finite(const Mat& m, const char* name) {
  if (!m.all_finite()) {
    throw NumericError(std::string("non-finite values in ") + name + " " +
                       m.shape_str());
  }
}

}  // namespace nsh
