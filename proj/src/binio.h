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

// Little-endian primitives shared by the on-disk formats. Readers track the
// byte offset so format errors can say where decoding stopped.

#ifndef NSH_SRC_BINIO_H_
#define NSH_SRC_BINIO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "nsh/errors.h"

namespace nsh::binio {

template <typename UInt>
void PutLE(std::ostream& out, UInt v) {
  unsigned char buf[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), sizeof(UInt));
}

inline void PutF32(std::ostream& out, float v) {
  PutLE(out, std::bit_cast<std::uint32_t>(v));
}
inline void PutF64(std::ostream& out, double v) {
  PutLE(out, std::bit_cast<std::uint64_t>(v));
}
inline void PutMagic(std::ostream& out, std::string_view magic) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  std::uint64_t offset() const { return offset_; }

  void Bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      throw FormatError(what_ + ": truncated, expected " + std::to_string(n) +
                            " more bytes but found " + std::to_string(got),
                        offset_ + got);
    }
    offset_ += n;
  }

  template <typename UInt>
  UInt LE() {
    unsigned char buf[sizeof(UInt)];
    Bytes(reinterpret_cast<char*>(buf), sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<UInt>(buf[i]) << (8 * i);
    return v;
  }

  float F32() { return std::bit_cast<float>(LE<std::uint32_t>()); }
  double F64() { return std::bit_cast<double>(LE<std::uint64_t>()); }

  void ExpectMagic(std::string_view magic) {
    char buf[8] = {};
    Bytes(buf, magic.size());
    if (std::string_view(buf, magic.size()) != magic) {
      throw FormatError(what_ + ": bad magic, expected \"" +
                            std::string(magic) + "\"",
                        offset_ - magic.size());
    }
  }

  // Fails unless exactly `n` payload bytes remain.
  void ExpectRemaining(std::uint64_t n) {
    const auto here = in_.tellg();
    in_.seekg(0, std::ios::end);
    const auto end = in_.tellg();
    in_.seekg(here);
    if (here < 0 || end < 0) return;  // not seekable
    const auto remaining = static_cast<std::uint64_t>(end - here);
    if (remaining < n) {
      throw FormatError(what_ + ": truncated payload, expected " +
                            std::to_string(n) + " bytes but found " +
                            std::to_string(remaining),
                        offset_ + remaining);
    }
  }

  const std::string& what() const { return what_; }

 private:
  std::istream& in_;
  std::string what_;
  std::uint64_t offset_ = 0;
};

inline std::ifstream OpenIn(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path + " for reading", 0);
  return in;
}

inline std::ofstream OpenOut(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing", 0);
  return out;
}

}  // namespace nsh::binio

#endif  // NSH_SRC_BINIO_H_
