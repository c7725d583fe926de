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

#ifndef NSH_HASHCORE_H_
#define NSH_HASHCORE_H_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "nsh/numerics.h"

namespace nsh {

// n x d_b matrix whose entries are exactly -1 or +1.
using CodeMatrix = Mat;

// Elementwise sign with sign(0) = +1. The straight-through backward is the
// identity, so callers route dL/dB to dL/dH unchanged.
CodeMatrix sign_ste(const Mat& h);
bool is_code_matrix(const Mat& b);

// S = B1 * B2^T / (2 d_b) + 0.5, i.e. S[i][j] = 1 - Hamming(b1_i, b2_j) / d_b
// for +-1 codes. Accepts real-valued inputs too (used by relaxed-code
// gradient checks).
Mat similarity_matrix(const Mat& b1, const Mat& b2);

struct SimilarityGrads {
  Mat d_b1;
  Mat d_b2;
};
SimilarityGrads similarity_backward(const Mat& b1, const Mat& b2,
                                    const Mat& dl_ds);

struct QuantizationResult {
  double loss = 0.0;
  Mat d_h;  // (H - B) / n; B is held constant.
};

// ||B - H||_F^2 / (2n) for one view with B treated as a constant.
QuantizationResult quantization_loss(const Mat& h, const CodeMatrix& b,
                                     std::size_t n);

// Bit k of an item's stream is 1 iff code entry k is +1. Trailing bits of the
// last word are zero.
class PackedCodes {
 public:
  PackedCodes() = default;
  PackedCodes(std::size_t n, std::size_t bits);

  std::size_t size() const { return n_; }
  std::size_t bits() const { return bits_; }
  std::size_t words_per_item() const { return words_per_item_; }

  std::span<const std::uint64_t> item(std::size_t i) const {
    return {words_.data() + i * words_per_item_, words_per_item_};
  }
  std::span<std::uint64_t> item(std::size_t i) {
    return {words_.data() + i * words_per_item_, words_per_item_};
  }
  const std::vector<std::uint64_t>& words() const { return words_; }
  std::vector<std::uint64_t>& words() { return words_; }

  friend bool operator==(const PackedCodes&, const PackedCodes&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t bits_ = 0;
  std::size_t words_per_item_ = 0;
  std::vector<std::uint64_t> words_;
};

PackedCodes pack_codes(const CodeMatrix& b);
CodeMatrix unpack_codes(const PackedCodes& p);

int hamming_packed(std::span<const std::uint64_t> a,
                   std::span<const std::uint64_t> b);

// "NSHC" container: magic, u32 version = 1, u64 n, u32 d_b, then
// n * ceil(d_b / 64) little-endian u64 words.
void write_packed_codes(std::ostream& out, const PackedCodes& codes);
PackedCodes read_packed_codes(std::istream& in);
void save_packed_codes(const std::string& path, const PackedCodes& codes);
PackedCodes load_packed_codes(const std::string& path);

}  // namespace nsh

#endif  // NSH_HASHCORE_H_
