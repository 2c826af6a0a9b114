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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "mbs/rng.hpp"
#include "oracles/oracles.hpp"

namespace testutil {

inline Eigen::MatrixXf normal_matrix(Eigen::Index rows, Eigen::Index cols, mbs::Xoshiro256& rng,
                                     double sigma = 1.0) {
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(sigma * rng.normal());
  return m;
}

struct RandomLayer {
  Eigen::MatrixXf w;  // out x in
  Eigen::MatrixXf x;  // in x N
};

// Activations shaped like hidden-layer inputs: correlated features after a
// ReLU, each feature with its own log-normal scale.
inline RandomLayer random_layer(std::uint64_t seed, Eigen::Index out = 8, Eigen::Index in = 16,
                                Eigen::Index n = 64) {
  auto rng = mbs::Xoshiro256::keyed(seed, "layer");
  RandomLayer l;
  l.w = normal_matrix(out, in, rng);
  const Eigen::MatrixXf a = normal_matrix(in, in, rng);
  const Eigen::MatrixXf z = normal_matrix(in, n, rng);
  l.x = (a * z).cwiseMax(0.0f);
  for (Eigen::Index j = 0; j < in; ++j) l.x.row(j) *= static_cast<float>(std::exp(0.5 * rng.normal()));
  return l;
}

template <class Derived>
oracle::Mat to_oracle(const Eigen::MatrixBase<Derived>& m) {
  oracle::Mat out = oracle::zeros(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = static_cast<double>(m(i, j));
  return out;
}

inline double rel_diff(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0 ? 0 : std::abs(a - b) / s;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mbs_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
