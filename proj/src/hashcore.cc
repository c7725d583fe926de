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

#include "nsh/hashcore.h"

#include <bit>
#include <fstream>
#include <string>

#include "binio.h"
#include "nsh/errors.h"

namespace nsh {

CodeMatrix sign_ste(const Mat& h) {
  CodeMatrix b(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.size(); ++i)
    b.values()[i] = h.values()[i] >= 0.0 ? 1.0 : -1.0;
  return b;
}

bool is_code_matrix(const Mat& b) {
  for (double v : b.values())
    if (v != 1.0 && v != -1.0) return false;
  return true;
}

Mat similarity_matrix(const Mat& b1, const Mat& b2) {
  if (b1.cols() != b2.cols() || b1.rows() != b2.rows()) {
    throw ShapeError("similarity_matrix: code batches " + b1.shape_str() +
                     " and " + b2.shape_str() + " differ");
  }
  if (b1.cols() == 0) throw ShapeError("similarity_matrix: zero-length codes");
  Mat s = matmul_nt(b1, b2);
  const double scale = 1.0 / (2.0 * static_cast<double>(b1.cols()));
  for (double& v : s.values()) v = v * scale + 0.5;
  return s;
}

SimilarityGrads similarity_backward(const Mat& b1, const Mat& b2,
                                    const Mat& dl_ds) {
  if (dl_ds.rows() != b1.rows() || dl_ds.cols() != b2.rows()) {
    throw ShapeError("similarity_backward: gradient " + dl_ds.shape_str() +
                     " does not match codes " + b1.shape_str());
  }
  const double scale = 1.0 / (2.0 * static_cast<double>(b1.cols()));
  SimilarityGrads g{matmul(dl_ds, b2), matmul_tn(dl_ds, b1)};
  g.d_b1 *= scale;
  g.d_b2 *= scale;
  return g;
}

QuantizationResult quantization_loss(const Mat& h, const CodeMatrix& b,
                                     std::size_t n) {
  if (h.rows() != b.rows() || h.cols() != b.cols()) {
    throw ShapeError("quantization_loss: " + h.shape_str() + " vs " +
                     b.shape_str());
  }
  if (n == 0) throw ParameterError("quantization_loss: n must be positive");
  QuantizationResult r{0.0, Mat(h.rows(), h.cols())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double diff = h.values()[i] - b.values()[i];
    r.loss += diff * diff;
    r.d_h.values()[i] = diff * inv_n;
  }
  r.loss *= 0.5 * inv_n;
  return r;
}

PackedCodes::PackedCodes(std::size_t n, std::size_t bits)
    : n_(n),
      bits_(bits),
      words_per_item_((bits + 63) / 64),
      words_(n * ((bits + 63) / 64), 0) {}

PackedCodes pack_codes(const CodeMatrix& b) {
  PackedCodes p(b.rows(), b.cols());
  for (std::size_t i = 0; i < b.rows(); ++i) {
    auto words = p.item(i);
    auto row = b.row(i);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k] > 0.0) words[k / 64] |= std::uint64_t{1} << (k % 64);
    }
  }
  return p;
}

CodeMatrix unpack_codes(const PackedCodes& p) {
  CodeMatrix b(p.size(), p.bits());
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto words = p.item(i);
    auto row = b.row(i);
    for (std::size_t k = 0; k < p.bits(); ++k)
      row[k] = (words[k / 64] >> (k % 64)) & 1 ? 1.0 : -1.0;
  }
  return b;
}

int hamming_packed(std::span<const std::uint64_t> a,
                   std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) {
    throw ShapeError("hamming_packed: items span " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()) + " words");
  }
  int d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

void write_packed_codes(std::ostream& out, const PackedCodes& codes) {
  binio::PutMagic(out, "NSHC");
  binio::PutLE<std::uint32_t>(out, 1);
  binio::PutLE<std::uint64_t>(out, codes.size());
  binio::PutLE<std::uint32_t>(out, static_cast<std::uint32_t>(codes.bits()));
  for (std::uint64_t w : codes.words()) binio::PutLE(out, w);
}

PackedCodes read_packed_codes(std::istream& in) {
  binio::Reader r(in, "NSHC codes");
  r.ExpectMagic("NSHC");
  const auto version = r.LE<std::uint32_t>();
  if (version != 1) {
    throw FormatError("NSHC codes: unsupported version " +
                          std::to_string(version),
                      r.offset() - 4);
  }
  const auto n = r.LE<std::uint64_t>();
  const auto bits = r.LE<std::uint32_t>();
  if (bits == 0) throw FormatError("NSHC codes: zero code length", r.offset() - 4);
  PackedCodes codes(n, bits);
  r.ExpectRemaining(codes.words().size() * 8);
  for (auto& w : codes.words()) w = r.LE<std::uint64_t>();
  const std::size_t tail = bits % 64;
  if (tail != 0) {
    const std::uint64_t mask = ~((std::uint64_t{1} << tail) - 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (codes.item(i).back() & mask) {
        throw FormatError("NSHC codes: nonzero padding bits in item " +
                              std::to_string(i),
                          20 + ((i + 1) * codes.words_per_item() - 1) * 8);
      }
    }
  }
  return codes;
}

void save_packed_codes(const std::string& path, const PackedCodes& codes) {
  auto out = binio::OpenOut(path);
  write_packed_codes(out, codes);
}

PackedCodes load_packed_codes(const std::string& path) {
  auto in = binio::OpenIn(path);
  return read_packed_codes(in);
}

}  // namespace nsh
