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

// Weight quantization on per-(row, group) asymmetric min-max grids:
// round-to-nearest, and a GPTQ sweep that pushes each column's rounding error
// into the columns not yet quantized.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "mbs/error.hpp"
#include "mbs/grid.hpp"
#include "mbs/hessian.hpp"
#include "mbs/prune.hpp"

namespace mbs {

struct GridParams {
  float scale = 1.0f;
  float zero_point = 0.0f;
};

/// zero_point = min, scale = (max - min) / (2^bits - 1); a constant group gets
/// scale 1 so every value decodes to min.
inline GridParams fit_grid(std::span<const float> values, int bits) {
  if (values.empty()) throw ConfigError("fit_grid: empty group");
  if (bits < 2 || bits > 16) throw ConfigError("bits must be in [2, 16]");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*hi == *lo) return {1.0f, *lo};
  return {(*hi - *lo) / static_cast<float>((1 << bits) - 1), *lo};
}

/// Nearest level index, ties to the even index (current FP rounding mode is
/// round-to-nearest-even).
inline int quantize_level(float value, GridParams g, int bits) {
  const double t = (static_cast<double>(value) - g.zero_point) / g.scale;
  const double l = std::nearbyint(t);
  return static_cast<int>(std::clamp(l, 0.0, static_cast<double>((1 << bits) - 1)));
}

inline float dequantize(GridParams g, int level) {
  return g.zero_point + g.scale * static_cast<float>(level);
}

struct QuantResult {
  Eigen::MatrixXf new_weights;
  QuantGrid grid;
  double layer_error = 0;
};

namespace detail {

inline QuantGrid empty_grid(Eigen::Index rows, Eigen::Index cols, int bits, int group_size) {
  if (bits < 2 || bits > 16) throw ConfigError("bits must be in [2, 16]");
  if (group_size < 1) throw ConfigError("group size must be >= 1");
  QuantGrid g;
  g.bits = bits;
  g.group_size = group_size;
  g.rows = static_cast<int>(rows);
  g.cols = static_cast<int>(cols);
  const auto cells = static_cast<std::size_t>(rows) * static_cast<std::size_t>(g.groups());
  g.scales.assign(cells, 1.0f);
  g.zero_points.assign(cells, 0.0f);
  return g;
}

inline GridParams fit_row_group(const Eigen::Ref<const Eigen::RowVectorXf>& row, Eigen::Index start,
                                Eigen::Index len, int bits) {
  const Eigen::RowVectorXf tmp = row.segment(start, len);
  return fit_grid(std::span<const float>(tmp.data(), static_cast<std::size_t>(len)), bits);
}

}  // namespace detail

/// Per row and group of consecutive columns: fit the grid, round each weight
/// to its nearest level.
inline QuantResult rtn_quantize(const Eigen::MatrixXf& w, int bits, int group_size,
                                const Eigen::MatrixXf& inputs) {
  QuantResult out;
  out.grid = detail::empty_grid(w.rows(), w.cols(), bits, group_size);
  out.new_weights.resize(w.rows(), w.cols());
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (int g = 0; g < out.grid.groups(); ++g) {
      const Eigen::Index start = static_cast<Eigen::Index>(g) * group_size;
      const Eigen::Index len = std::min<Eigen::Index>(group_size, w.cols() - start);
      const Eigen::RowVectorXf row = w.row(r);
      const GridParams p = detail::fit_row_group(row, start, len, bits);
      out.grid.scales[out.grid.cell(static_cast<int>(r), g)] = p.scale;
      out.grid.zero_points[out.grid.cell(static_cast<int>(r), g)] = p.zero_point;
      for (Eigen::Index c = start; c < start + len; ++c)
        out.new_weights(r, c) = dequantize(p, quantize_level(w(r, c), p, bits));
    }
  }
  out.layer_error = layer_error(w, out.new_weights, inputs);
  return out;
}

struct GptqOptions {
  int bits = 3;
  int group_size = 8;
  int threads = 1;
};

/// GPTQ sweep in fixed left-to-right column order. Entering a group, each
/// row's grid is fit on its current (already compensated) weights. After
/// column j is quantized, with U the upper Cholesky factor of the dampened
/// inverse,
///
///     w_{j+1:} -= (w_j - q_j) / U_jj * U_{j, j+1:}
///
/// which is the optimal correction of the not-yet-quantized columns.
inline QuantResult gptq_quantize(const Eigen::MatrixXf& w, const DampenedInverse& hinv,
                                 const Eigen::MatrixXf& inputs, const GptqOptions& opt) {
  const Eigen::Index rows = w.rows(), d = w.cols();
  if (hinv.inverse.rows() != d)
    throw ConfigError("gptq: hessian dimension " + std::to_string(hinv.inverse.rows()) +
                      " does not match layer input " + std::to_string(d));
  QuantResult out;
  out.grid = detail::empty_grid(rows, d, opt.bits, opt.group_size);
  out.new_weights.resize(rows, d);
  const Eigen::MatrixXd U = hinv.upper();

  detail::for_rows(rows, opt.threads, [&](Eigen::Index r) {
    Eigen::RowVectorXd work = w.row(r).cast<double>();
    GridParams p;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (j % opt.group_size == 0) {
        const Eigen::Index len = std::min<Eigen::Index>(opt.group_size, d - j);
        const Eigen::RowVectorXf cur = work.segment(j, len).cast<float>();
        p = fit_grid(std::span<const float>(cur.data(), static_cast<std::size_t>(len)), opt.bits);
        const auto cell = out.grid.cell(static_cast<int>(r), static_cast<int>(j / opt.group_size));
        out.grid.scales[cell] = p.scale;
        out.grid.zero_points[cell] = p.zero_point;
      }
      const float q = dequantize(p, quantize_level(static_cast<float>(work[j]), p, opt.bits));
      out.new_weights(r, j) = q;
      const double err = (work[j] - static_cast<double>(q)) / U(j, j);
      if (err != 0.0) work.tail(d - j - 1) -= err * U.row(j).tail(d - j - 1);
    }
  });

  out.layer_error = layer_error(w, out.new_weights, inputs);
  return out;
}

/// Every weight decodes exactly from an in-range level of its cell.
inline bool on_grid(const Eigen::MatrixXf& w, const QuantGrid& grid) {
  if (w.rows() != grid.rows || w.cols() != grid.cols) return false;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      const int g = static_cast<int>(c / grid.group_size);
      const GridParams p{grid.scales[grid.cell(static_cast<int>(r), g)],
                         grid.zero_points[grid.cell(static_cast<int>(r), g)]};
      const int level = quantize_level(w(r, c), p, grid.bits);
      if (grid.dequantize(static_cast<int>(r), g, level) != w(r, c)) return false;
    }
  }
  return true;
}

}  // namespace mbs
