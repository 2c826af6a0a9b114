// Copyright 2026 The MBS Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   "MBSCKPT1"                                   8 bytes
//   u32 version (= 1)
//   u32 vocab_size, context_k, embed_dim, hidden_dim, n_hidden_layers
//   u64 seed, train_steps, corpus_fingerprint
//   matrix embedding                             vocab_size x embed_dim
//   per linear layer: matrix weights (out x in), matrix bias (out x 1)
//   optional grid section:
//     "MBSQNT1\0"                                8 bytes
//     u32 layer count
//     per layer: u32 bits, u32 group_size, u32 rows, u32 groups,
//                f32[rows*groups] scales, f32[rows*groups] zero_points
//
//   matrix := u32 rows, u32 cols, f32[rows*cols] row-major

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "mbs/error.hpp"
#include "mbs/model.hpp"
#include "mbs/rng.hpp"

namespace mbs {

inline constexpr std::string_view kCheckpointMagic{"MBSCKPT1", 8};
inline constexpr std::string_view kGridMagic{"MBSQNT1\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f32s(const float* p, std::size_t n) { raw(p, n * 4); }

  template <class Derived>
  void matrix(const Eigen::DenseBase<Derived>& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    f32s(rm.data(), static_cast<std::size_t>(rm.size()));
  }

  std::vector<char> take() { return std::move(bytes_); }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  void raw(void* p, std::size_t n, std::string_view section) {
    if (pos_ + n > bytes_.size())
      throw ConfigError("checkpoint truncated: missing " + std::string(section));
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32(std::string_view section) {
    std::uint32_t v;
    raw(&v, 4, section);
    return v;
  }
  std::uint64_t u64(std::string_view section) {
    std::uint64_t v;
    raw(&v, 8, section);
    return v;
  }
  void f32s(float* p, std::size_t n, std::string_view section) { raw(p, n * 4, section); }

  Eigen::MatrixXf matrix(std::string_view section, Eigen::Index rows, Eigen::Index cols) {
    const auto r = u32(section), c = u32(section);
    if (r != rows || c != cols)
      throw ConfigError("checkpoint: " + std::string(section) + " is " + std::to_string(r) +
                        "x" + std::to_string(c) + ", shape chain expects " +
                        std::to_string(rows) + "x" + std::to_string(cols));
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    f32s(rm.data(), static_cast<std::size_t>(rm.size()), section);
    return rm;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(const ModelCheckpoint& ckpt) {
  ckpt.validate();
  detail::ByteWriter w;
  w.raw(kCheckpointMagic.data(), 8);
  w.u32(kCheckpointVersion);
  const auto& c = ckpt.config;
  for (int v : {c.vocab_size, c.context_k, c.embed_dim, c.hidden_dim, c.n_hidden_layers})
    w.u32(static_cast<std::uint32_t>(v));
  w.u64(ckpt.metadata.seed);
  w.u64(ckpt.metadata.train_steps);
  w.u64(ckpt.metadata.corpus_fingerprint);
  w.matrix(ckpt.embedding);
  for (const auto& layer : ckpt.layers) {
    w.matrix(layer.weights);
    w.matrix(layer.bias);
  }
  if (ckpt.quantized()) {
    w.raw(kGridMagic.data(), 8);
    w.u32(static_cast<std::uint32_t>(ckpt.grids.size()));
    for (const auto& g : ckpt.grids) {
      w.u32(static_cast<std::uint32_t>(g.bits));
      w.u32(static_cast<std::uint32_t>(g.group_size));
      w.u32(static_cast<std::uint32_t>(g.rows));
      w.u32(static_cast<std::uint32_t>(g.groups()));
      w.f32s(g.scales.data(), g.scales.size());
      w.f32s(g.zero_points.data(), g.zero_points.size());
    }
  }
  return w.take();
}

inline ModelCheckpoint deserialize_checkpoint(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  std::array<char, 8> magic{};
  if (bytes.size() < 8 || (r.raw(magic.data(), 8, "header"),
                           std::string_view(magic.data(), 8) != kCheckpointMagic))
    throw ConfigError("unrecognized checkpoint (bad magic)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version));

  ModelCheckpoint ckpt;
  auto& c = ckpt.config;
  c.vocab_size = static_cast<int>(r.u32("config"));
  c.context_k = static_cast<int>(r.u32("config"));
  c.embed_dim = static_cast<int>(r.u32("config"));
  c.hidden_dim = static_cast<int>(r.u32("config"));
  c.n_hidden_layers = static_cast<int>(r.u32("config"));
  c.validate();
  ckpt.metadata.seed = r.u64("metadata");
  ckpt.metadata.train_steps = r.u64("metadata");
  ckpt.metadata.corpus_fingerprint = r.u64("metadata");
  ckpt.embedding = r.matrix("embedding", c.vocab_size, c.embed_dim);
  for (int l = 0; l < c.n_linear(); ++l) {
    const auto name = "layer " + std::to_string(l);
    LinearLayer layer;
    layer.weights = r.matrix(name + " weights", c.layer_out(l), c.layer_in(l));
    layer.bias = r.matrix(name + " bias", c.layer_out(l), 1);
    ckpt.layers.push_back(std::move(layer));
  }
  if (!r.at_end()) {
    std::array<char, 8> gm{};
    r.raw(gm.data(), 8, "grid section header");
    if (std::string_view(gm.data(), 8) != kGridMagic)
      throw ConfigError("checkpoint: unrecognized trailing section");
    const auto n = r.u32("grid section layer count");
    if (n != static_cast<std::uint32_t>(c.n_linear()))
      throw ConfigError("checkpoint: grid section covers " + std::to_string(n) + " of " +
                        std::to_string(c.n_linear()) + " layers");
    for (int l = 0; l < c.n_linear(); ++l) {
      const auto name = "grid for layer " + std::to_string(l);
      QuantGrid g;
      g.bits = static_cast<int>(r.u32(name));
      g.group_size = static_cast<int>(r.u32(name));
      g.rows = static_cast<int>(r.u32(name));
      const auto groups = r.u32(name);
      g.cols = c.layer_in(l);
      if (g.bits < 2 || g.bits > 16 || g.group_size < 1 || g.rows != c.layer_out(l) ||
          groups != static_cast<std::uint32_t>(g.groups()))
        throw ConfigError("checkpoint: inconsistent " + name);
      const auto cells = static_cast<std::size_t>(g.rows) * groups;
      g.scales.resize(cells);
      g.zero_points.resize(cells);
      r.f32s(g.scales.data(), cells, name + " scales");
      r.f32s(g.zero_points.data(), cells, name + " zero points");
      ckpt.grids.push_back(std::move(g));
    }
    if (!r.at_end())
      throw ConfigError("checkpoint: " + std::to_string(r.remaining()) +
                        " unexpected trailing bytes");
  }
  ckpt.validate();
  return ckpt;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("failed writing checkpoint " + path.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint not found: " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

inline std::uint64_t checkpoint_hash(const ModelCheckpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  return fnv1a64(std::string_view(bytes.data(), bytes.size()));
}

}  // namespace mbs
