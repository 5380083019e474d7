// Copyright (c) 2026 MSDiff Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "msdiff/tensor.hpp"

// Flat binary parameter checkpoints:
//   magic "MSDW", u32 version, u32 count,
//   per tensor: u32 name length, UTF-8 name, u32 rank,
//               u64 extents, little-endian f64 payload.
namespace msdiff::numkit {

constexpr std::uint32_t kCheckpointVersion = 1;

namespace io {

inline void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, 4);
}

inline void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  put_bytes(out, b, 8);
}

inline void put_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  std::ifstream in;
  std::uint64_t offset = 0;
  std::string path;

  Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw FormatError("cannot open " + p);
  }

  void get_bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw FormatError(path + ": truncated at byte offset " + std::to_string(offset) +
                        " (wanted " + std::to_string(n) + " more bytes, got " +
                        std::to_string(in.gcount()) + ")");
    }
    offset += n;
  }

  std::uint32_t get_u32() {
    unsigned char b[4];
    get_bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t get_u64() {
    unsigned char b[8];
    get_bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  double get_f64() {
    std::uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  float get_f32() {
    unsigned char b[4];
    get_bytes(b, 4);
    std::uint32_t bits = 0;
    for (int i = 3; i >= 0; --i) bits = (bits << 8) | b[i];
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

inline void put_f32(std::ofstream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

}  // namespace io

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write("MSDW", 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(out, name.data(), name.size());
    io::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) io::put_u64(out, static_cast<std::uint64_t>(e));
    for (std::int64_t i = 0; i < t.size(); ++i) io::put_f64(out, t.at(i));
  }
  if (!out) throw FormatError("write failure on " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
  io::Reader r(path);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, "MSDW", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0 (expected MSDW)");
  }
  const std::uint32_t version = r.get_u32();
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.get_u32();
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.get_u32();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const std::uint32_t rank = r.get_u32();
    Shape shape(rank);
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape[k] = static_cast<std::int64_t>(r.get_u64());
    }
    Tensor t = Tensor::zeros(shape);
    for (std::int64_t k = 0; k < t.size(); ++k) t.at(k) = r.get_f64();
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline const Tensor& find_tensor(const NamedTensors& ts, const std::string& name) {
  for (const auto& [n, t] : ts) {
    if (n == name) return t;
  }
  throw FormatError("checkpoint is missing tensor '" + name + "'");
}

inline void ensure_finite(const NamedTensors& ts, const std::string& path) {
  for (const auto& [name, t] : ts) {
    if (!t.all_finite()) {
      throw FormatError(path + ": tensor '" + name + "' contains non-finite values");
    }
  }
}

}  // namespace msdiff::numkit
