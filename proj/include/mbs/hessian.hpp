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

// Layer Hessian proxies H = X X^T (inputs as columns) and their dampened
// inverses.
//
// H is the Hessian of the layer reconstruction error up to a positive factor;
// saliencies and compensation updates are invariant to that factor, so the
// conventional 2 is dropped.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "mbs/error.hpp"
#include "mbs/model.hpp"

namespace mbs {

struct LayerHessian {
  int layer_index = 0;
  Eigen::MatrixXd matrix;
  std::uint64_t n_samples = 0;
  std::map<std::string, Eigen::MatrixXd> per_language;

  Eigen::Index dim() const { return matrix.rows(); }
};

namespace detail {

// Sum over columns, in column order, of x x^T; lower triangle then mirrored.
inline void add_outer_products(Eigen::MatrixXd& h, const Eigen::Ref<const Eigen::MatrixXf>& x) {
  const Eigen::Index d = x.rows();
  Eigen::VectorXd col(d);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    col = x.col(c).cast<double>();
    for (Eigen::Index j = 0; j < d; ++j) {
      const double xj = col[j];
      if (xj == 0.0) continue;
      h.col(j).tail(d - j).noalias() += xj * col.tail(d - j);
    }
  }
}

inline void mirror_lower(Eigen::MatrixXd& h) {
  h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
}

}  // namespace detail

/// H = sum_c x_c x_c^T in f64, recorded as `lang`'s part (unless
/// record_part is false) and as the total.
inline LayerHessian accumulate(const LayerCapture& capture, const std::string& lang,
                               bool record_part = true) {
  if (capture.n_samples() == 0) throw ConfigError("hessian: capture has zero samples");
  LayerHessian h;
  h.layer_index = capture.layer_index;
  h.n_samples = capture.n_samples();
  h.matrix = Eigen::MatrixXd::Zero(capture.inputs.rows(), capture.inputs.rows());
  detail::add_outer_products(h.matrix, capture.inputs);
  detail::mirror_lower(h.matrix);
  if (record_part) h.per_language.emplace(lang, h.matrix);
  return h;
}

/// Elementwise sum in list order; per-language parts are unioned (parts of the
/// same language are summed).
inline LayerHessian merge(std::span<const LayerHessian> parts) {
  if (parts.empty()) throw ConfigError("hessian merge: at least one part required");
  LayerHessian out;
  out.layer_index = parts.front().layer_index;
  out.matrix = Eigen::MatrixXd::Zero(parts.front().dim(), parts.front().dim());
  for (const auto& p : parts) {
    if (p.dim() != out.dim() || p.layer_index != out.layer_index)
      throw ConfigError("hessian merge: parts disagree on layer or dimension (" +
                        std::to_string(p.dim()) + " vs " + std::to_string(out.dim()) + ")");
    out.matrix += p.matrix;
    out.n_samples += p.n_samples;
    for (const auto& [lang, m] : p.per_language) {
      auto [it, inserted] = out.per_language.emplace(lang, m);
      if (!inserted) it->second += m;
    }
  }
  return out;
}

/// One part per language run of the capture, merged in run order.
inline LayerHessian accumulate_by_language(const LayerCapture& capture) {
  if (capture.runs.empty()) return accumulate(capture, "", false);
  std::vector<LayerHessian> parts;
  Eigen::Index start = 0;
  for (const auto& run : capture.runs) {
    LayerCapture slice;
    slice.layer_index = capture.layer_index;
    slice.inputs = capture.inputs.middleCols(start, static_cast<Eigen::Index>(run.columns));
    start += static_cast<Eigen::Index>(run.columns);
    parts.push_back(accumulate(slice, run.lang_id));
  }
  return merge(parts);
}

/// Per-feature L2 norms of the captured inputs: sqrt(diag(X X^T)).
inline Eigen::VectorXd column_norms(const LayerCapture& capture) {
  if (capture.n_samples() == 0) throw ConfigError("column norms: capture has zero samples");
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(capture.inputs.rows());
  for (Eigen::Index c = 0; c < capture.inputs.cols(); ++c)
    sq += capture.inputs.col(c).cast<double>().cwiseAbs2();
  return sq.cwiseSqrt();
}

struct DampenedInverse {
  int layer_index = 0;
  double lambda = 0;
  Eigen::MatrixXd inverse;               // (H + lambda I)^-1
  Eigen::MatrixXd cholesky_of_inverse;   // lower L with L L^T = inverse
  Eigen::VectorXd inverse_diagonal;

  // Upper factor U = L^T. For trailing index sets R = {r, r+1, ...},
  // (H_RR + lambda I)^-1 = U_RR^T U_RR; sweeps read restricted inverses from it.
  Eigen::MatrixXd upper() const { return cholesky_of_inverse.transpose(); }
};

/// (H + lambda I)^-1 with lambda = lambda_rel * mean(diag H), via Cholesky.
/// If the factorization fails lambda is doubled (from a small floor when it is
/// zero) up to 10 times before giving up.
inline DampenedInverse dampen_invert(const LayerHessian& h, double lambda_rel) {
  if (lambda_rel < 0) throw ConfigError("dampening factor must be non-negative");
  if (!h.matrix.allFinite())
    throw RuntimeError("hessian for layer " + std::to_string(h.layer_index) + " contains NaN/Inf");
  const Eigen::Index d = h.dim();
  const double mean_diag = d > 0 ? h.matrix.diagonal().mean() : 0.0;
  double lambda = lambda_rel * mean_diag;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);

  for (int attempt = 0; attempt <= 10; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(h.matrix + lambda * I);
    if (llt.info() == Eigen::Success) {
      DampenedInverse out;
      out.layer_index = h.layer_index;
      out.lambda = lambda;
      out.inverse = llt.solve(I);
      out.inverse = 0.5 * (out.inverse + out.inverse.transpose());
      Eigen::LLT<Eigen::MatrixXd> inv_llt(out.inverse);
      if (inv_llt.info() == Eigen::Success) {
        out.cholesky_of_inverse = inv_llt.matrixL();
        out.inverse_diagonal = out.inverse.diagonal();
        if ((out.inverse_diagonal.array() > 0).all()) return out;
      }
    }
    lambda = lambda > 0 ? 2 * lambda : 1e-10 * (mean_diag > 0 ? mean_diag : 1.0);
  }
  throw RuntimeError("hessian for layer " + std::to_string(h.layer_index) +
                     " is not positive definite even after dampening escalation");
}

// Debug dump: one CSV row per matrix row.
inline void write_matrix_csv(const Eigen::MatrixXd& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  out.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << m(i, j);
    out << '\n';
  }
}

}  // namespace mbs
