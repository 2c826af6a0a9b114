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

// Language similarity from embedding-layer activations: per-language norm
// profiles, pairwise angles in degrees, average distances and a classical MDS
// embedding of the distance matrix.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "mbs/error.hpp"
#include "mbs/hessian.hpp"
#include "mbs/model.hpp"

namespace mbs {

struct ActivationProfile {
  std::string lang_id;
  Eigen::VectorXd norms;  // per input feature of the first linear layer
  std::uint64_t n_positions = 0;
};

/// Norms of the embedding-layer output (the first linear layer's input) over
/// every window of the language's segments.
inline ActivationProfile build_profile(const ModelCheckpoint& ckpt, const std::string& lang,
                                       std::span<const Segment> segments) {
  if (segments.empty()) throw ConfigError("profile for '" + lang + "': no segments");
  const auto cap = capture_layer(ckpt, segments, 0);
  return {lang, column_norms(cap), cap.n_samples()};
}

/// arccos of the cosine similarity, in degrees, clamped to [0, 180].
inline double angle_degrees(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw ConfigError("angle: profiles differ in dimension");
  const double np = p.norm(), nq = q.norm();
  if (np == 0 || nq == 0) throw ConfigError("angle: zero profile vector");
  const double cos = std::clamp(p.dot(q) / (np * nq), -1.0, 1.0);
  return std::acos(cos) * 180.0 / std::numbers::pi;
}

inline double angle_degrees(const ActivationProfile& p, const ActivationProfile& q) {
  return angle_degrees(p.norms, q.norms);
}

struct DistanceMatrix {
  std::vector<std::string> langs;
  Eigen::MatrixXd degrees;

  std::size_t index_of(std::string_view lang) const {
    const auto it = std::find(langs.begin(), langs.end(), lang);
    if (it == langs.end()) throw ConfigError("distance matrix has no language '" + std::string(lang) + "'");
    return static_cast<std::size_t>(it - langs.begin());
  }
};

inline DistanceMatrix distance_matrix(std::span<const ActivationProfile> profiles) {
  if (profiles.size() < 2) throw ConfigError("distance matrix needs at least 2 profiles");
  const auto n = static_cast<Eigen::Index>(profiles.size());
  DistanceMatrix d;
  d.degrees = Eigen::MatrixXd::Zero(n, n);
  for (const auto& p : profiles) d.langs.push_back(p.lang_id);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d.degrees(i, j) = d.degrees(j, i) =
          angle_degrees(profiles[static_cast<std::size_t>(i)], profiles[static_cast<std::size_t>(j)]);
  return d;
}

/// Row mean including the zero self-distance (row sum / L).
inline double average_distance(const DistanceMatrix& d, std::string_view lang) {
  const auto i = static_cast<Eigen::Index>(d.index_of(lang));
  return d.degrees.row(i).sum() / static_cast<double>(d.degrees.cols());
}

/// Classical (Torgerson) MDS: B = -1/2 J D^2 J, coordinates from the top `dim`
/// eigenpairs, negative eigenvalues clamped to 0. Each axis is flipped so its
/// first non-negligible coordinate is positive.
inline Eigen::MatrixXd mds_embed(const Eigen::MatrixXd& dist, int dim = 2) {
  const Eigen::Index n = dist.rows();
  if (dist.cols() != n) throw ConfigError("mds: distance matrix must be square");
  if (dim < 1 || n < dim + 1)
    throw ConfigError("mds: need at least dim+1 points (" + std::to_string(n) + " for dim " +
                      std::to_string(dim) + ")");
  const Eigen::MatrixXd J =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd B = -0.5 * J * dist.cwiseAbs2() * J;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (B + B.transpose()));
  if (es.info() != Eigen::Success) throw RuntimeError("mds: eigen-solver failed");

  Eigen::MatrixXd coords(n, dim);
  const double scale = std::max(1.0, dist.cwiseAbs().maxCoeff());
  for (int a = 0; a < dim; ++a) {
    const Eigen::Index k = n - 1 - a;  // eigenvalues ascend
    const double lambda = std::max(0.0, es.eigenvalues()[k]);
    Eigen::VectorXd axis = es.eigenvectors().col(k) * std::sqrt(lambda);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(axis[i]) > 1e-12 * scale) {
        if (axis[i] < 0) axis = -axis;
        break;
      }
    }
    coords.col(a) = axis;
  }
  return coords;
}

inline Eigen::MatrixXd mds_embed(const DistanceMatrix& d, int dim = 2) {
  return mds_embed(d.degrees, dim);
}

// CSV: header "lang,<l1>,...,<lL>", then one row per language.
inline void write_distance_csv(const DistanceMatrix& d, std::ostream& out) {
  out.precision(17);
  out << "lang";
  for (const auto& l : d.langs) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < d.langs.size(); ++i) {
    out << d.langs[i];
    for (Eigen::Index j = 0; j < d.degrees.cols(); ++j)
      out << ',' << d.degrees(static_cast<Eigen::Index>(i), j);
    out << '\n';
  }
}

inline DistanceMatrix read_distance_csv(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      cells.push_back(cell);
    }
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("distance CSV: empty input");
  const auto header = split(line);
  if (header.size() < 2 || header[0] != "lang") throw ConfigError("distance CSV: bad header");
  DistanceMatrix d;
  d.langs.assign(header.begin() + 1, header.end());
  const auto n = static_cast<Eigen::Index>(d.langs.size());
  d.degrees.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ConfigError("distance CSV: missing row " + std::to_string(i));
    const auto cells = split(line);
    if (static_cast<Eigen::Index>(cells.size()) != n + 1 || cells[0] != d.langs[static_cast<std::size_t>(i)])
      throw ConfigError("distance CSV: malformed row for '" + (cells.empty() ? "" : cells[0]) + "'");
    for (Eigen::Index j = 0; j < n; ++j) d.degrees(i, j) = std::stod(cells[static_cast<std::size_t>(j + 1)]);
  }
  if (d.degrees != d.degrees.transpose())
    throw ConfigError("distance CSV: matrix is not symmetric");
  return d;
}

inline DistanceMatrix load_distance_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("distance CSV not found: " + path);
  return read_distance_csv(in);
}

inline void write_coordinates_csv(const std::vector<std::string>& langs, const Eigen::MatrixXd& coords,
                                  std::ostream& out) {
  out.precision(17);
  out << "lang";
  for (Eigen::Index a = 0; a < coords.cols(); ++a) out << ",x" << a + 1;
  out << '\n';
  for (std::size_t i = 0; i < langs.size(); ++i) {
    out << langs[i];
    for (Eigen::Index a = 0; a < coords.cols(); ++a) out << ',' << coords(static_cast<Eigen::Index>(i), a);
    out << '\n';
  }
}

}  // namespace mbs
