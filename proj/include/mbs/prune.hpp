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

// Unstructured pruning of one linear layer: magnitude, Wanda (|W| * ||X_j||,
// no compensation) and an OBS sweep with SparseGPT saliencies and
// Hessian-based compensation of the surviving weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "mbs/error.hpp"
#include "mbs/hessian.hpp"

namespace mbs {

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SparsityMask {
  int layer_index = 0;
  BoolMatrix keep;  // true = kept
  double target_sparsity = 0;

  Eigen::Index kept_in_row(Eigen::Index r) const { return keep.row(r).count(); }
};

struct PruneResult {
  Eigen::MatrixXf new_weights;
  SparsityMask mask;
  double layer_error = 0;
};

/// Weights pruned per row: round(sparsity * in_dim).
inline Eigen::Index pruned_per_row(Eigen::Index in_dim, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0))
    throw ConfigError("sparsity must be in [0, 1), got " + std::to_string(sparsity));
  return static_cast<Eigen::Index>(std::llround(sparsity * static_cast<double>(in_dim)));
}

/// ||W_old X - W_new X||_F^2 accumulated in f64.
inline double layer_error(const Eigen::MatrixXf& w_old, const Eigen::MatrixXf& w_new,
                          const Eigen::MatrixXf& inputs) {
  if (w_old.rows() != w_new.rows() || w_old.cols() != w_new.cols() ||
      w_old.cols() != inputs.rows())
    throw ConfigError("layer_error: shape mismatch");
  const Eigen::MatrixXd diff = (w_old - w_new).cast<double>();
  return (diff * inputs.cast<double>()).squaredNorm();
}

namespace detail {

// Column indices sorted by ascending score; equal scores put the higher index
// first, so keeping the tail favours lower indices.
template <class Row>
std::vector<Eigen::Index> ascending_by_score(const Row& scores, Eigen::Index begin,
                                             Eigen::Index end) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(end - begin));
  std::iota(idx.begin(), idx.end(), begin);
  std::stable_sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (scores(a) != scores(b)) return scores(a) < scores(b);
    return a > b;
  });
  return idx;
}

inline SparsityMask top_k_mask(const Eigen::MatrixXd& scores, double sparsity) {
  SparsityMask m;
  m.target_sparsity = sparsity;
  m.keep = BoolMatrix::Constant(scores.rows(), scores.cols(), true);
  const auto drop = pruned_per_row(scores.cols(), sparsity);
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const auto order = ascending_by_score(scores.row(r), 0, scores.cols());
    for (Eigen::Index i = 0; i < drop; ++i) m.keep(r, order[static_cast<std::size_t>(i)]) = false;
  }
  return m;
}

// Runs fn(row) for every row, split into contiguous chunks across threads.
// Each row is computed identically regardless of the split.
template <class Fn>
void for_rows(Eigen::Index rows, int threads, Fn&& fn) {
  const auto n_threads = static_cast<Eigen::Index>(std::max(1, threads));
  if (n_threads == 1 || rows < 2) {
    for (Eigen::Index r = 0; r < rows; ++r) fn(r);
    return;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (rows + n_threads - 1) / n_threads;
  for (Eigen::Index t = 0; t < n_threads; ++t) {
    const Eigen::Index lo = t * chunk, hi = std::min(rows, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (Eigen::Index r = lo; r < hi; ++r) fn(r);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Keeps the largest |w| per row.
inline SparsityMask magnitude_prune(const Eigen::MatrixXf& w, double sparsity) {
  return detail::top_k_mask(w.cwiseAbs().cast<double>(), sparsity);
}

/// S_ij = |W_ij| * ||X_j||_2.
inline Eigen::MatrixXd wanda_metric(const Eigen::MatrixXf& w, const Eigen::VectorXd& col_norms) {
  if (col_norms.size() != w.cols())
    throw ConfigError("wanda metric: " + std::to_string(col_norms.size()) +
                      " norms for " + std::to_string(w.cols()) + " input features");
  return w.cwiseAbs().cast<double>() * col_norms.asDiagonal();
}

/// S_ij = W_ij^2 / [(H + lambda I)^-1]_jj.
inline Eigen::MatrixXd sparsegpt_metric(const Eigen::MatrixXf& w,
                                        const Eigen::VectorXd& inverse_diagonal) {
  if (inverse_diagonal.size() != w.cols())
    throw ConfigError("sparsegpt metric: inverse diagonal has wrong length");
  if ((inverse_diagonal.array() <= 0).any())
    throw ConfigError("sparsegpt metric: inverse diagonal must be positive");
  return w.cast<double>().cwiseAbs2() * inverse_diagonal.cwiseInverse().asDiagonal();
}

inline SparsityMask wanda_mask(const Eigen::MatrixXf& w, const Eigen::VectorXd& col_norms,
                               double sparsity) {
  return detail::top_k_mask(wanda_metric(w, col_norms), sparsity);
}

inline PruneResult apply_mask(const Eigen::MatrixXf& w, SparsityMask mask,
                              const Eigen::MatrixXf& inputs) {
  PruneResult out;
  out.new_weights = mask.keep.select(w, 0.0f);
  out.layer_error = layer_error(w, out.new_weights, inputs);
  out.mask = std::move(mask);
  return out;
}

/// Wanda: per-row top-k of |W| * ||X_j||, no weight updates.
inline PruneResult wanda_prune(const Eigen::MatrixXf& w, const Eigen::VectorXd& col_norms,
                               double sparsity, const Eigen::MatrixXf& inputs) {
  return apply_mask(w, wanda_mask(w, col_norms, sparsity), inputs);
}

struct ObsOptions {
  double sparsity = 0.5;
  Eigen::Index block_size = 32;
  int threads = 1;
};

/// OBS sweep over column blocks, left to right.
///
/// Let R be the columns not yet frozen (current block and everything to its
/// right) and G = (H_RR + lambda I)^-1, read from the upper Cholesky factor
/// of the full dampened inverse. Per row, the block's quota of weights with
/// the smallest saliency w_j^2 / G_jj is pruned as a set S and the survivors
/// in R receive the joint optimal correction
///
///     w_R -= w_S (G_SS)^-1 G_S,:
///
/// after which the block is frozen. Block quotas are cumulative floors of the
/// row quota so every row meets its count exactly.
inline PruneResult obs_prune(const Eigen::MatrixXf& w, const DampenedInverse& hinv,
                             const Eigen::MatrixXf& inputs, const ObsOptions& opt) {
  const Eigen::Index rows = w.rows(), d = w.cols();
  if (hinv.inverse.rows() != d)
    throw ConfigError("obs_prune: hessian dimension " + std::to_string(hinv.inverse.rows()) +
                      " does not match layer input " + std::to_string(d));
  if (opt.block_size < 1) throw ConfigError("obs_prune: block size must be >= 1");
  const Eigen::Index quota = pruned_per_row(d, opt.sparsity);

  PruneResult out;
  out.mask.layer_index = hinv.layer_index;
  out.mask.target_sparsity = opt.sparsity;
  out.mask.keep = BoolMatrix::Constant(rows, d, true);
  Eigen::MatrixXd work = w.cast<double>();
  const Eigen::MatrixXd U = hinv.upper();

  for (Eigen::Index start = 0; start < d; start += opt.block_size) {
    const Eigen::Index end = std::min(d, start + opt.block_size);
    const Eigen::Index nb = end - start, nr = d - start;
    const Eigen::Index block_quota = quota * end / d - quota * start / d;
    if (block_quota == 0) continue;
    // Rows of G for the block's columns: U_BB^T U_B,R.
    const Eigen::MatrixXd G =
        U.block(start, start, nb, nb).triangularView<Eigen::Upper>().transpose() *
        U.block(start, start, nb, nr);

    detail::for_rows(rows, opt.threads, [&](Eigen::Index r) {
      auto row = work.row(r);
      if ((row.array() == 0.0).all()) {
        // Degenerate row: prune the rightmost entries of the block, no update.
        for (Eigen::Index i = 0; i < block_quota; ++i) out.mask.keep(r, end - 1 - i) = false;
        return;
      }
      Eigen::VectorXd sal(nb);
      for (Eigen::Index b = 0; b < nb; ++b) sal[b] = row[start + b] * row[start + b] / G(b, b);
      auto order = detail::ascending_by_score(sal, 0, nb);
      order.resize(static_cast<std::size_t>(block_quota));
      std::sort(order.begin(), order.end());

      const auto ns = static_cast<Eigen::Index>(order.size());
      Eigen::MatrixXd gss(ns, ns);
      Eigen::MatrixXd gsr(ns, nr);
      Eigen::VectorXd ws(ns);
      for (Eigen::Index i = 0; i < ns; ++i) {
        const auto bi = order[static_cast<std::size_t>(i)];
        ws[i] = row[start + bi];
        gsr.row(i) = G.row(bi);
        for (Eigen::Index j = 0; j < ns; ++j) gss(i, j) = G(bi, order[static_cast<std::size_t>(j)]);
      }
      const Eigen::VectorXd coef = gss.llt().solve(ws);
      row.tail(nr) -= coef.transpose() * gsr;
      for (auto bi : order) {
        row[start + bi] = 0.0;
        out.mask.keep(r, start + bi) = false;
      }
    });
  }

  out.new_weights = out.mask.keep.select(work.cast<float>(), 0.0f);
  out.layer_error = layer_error(w, out.new_weights, inputs);
  return out;
}

/// Builds H from the capture, inverts it with dampening and runs the sweep.
inline PruneResult obs_prune(const Eigen::MatrixXf& w, const LayerHessian& h,
                             const Eigen::MatrixXf& inputs, const ObsOptions& opt,
                             double lambda_rel) {
  return obs_prune(w, dampen_invert(h, lambda_rel), inputs, opt);
}

inline void write_mask_csv(const SparsityMask& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write " + path);
  for (Eigen::Index r = 0; r < mask.keep.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.keep.cols(); ++c)
      out << (c ? "," : "") << (mask.keep(r, c) ? 1 : 0);
    out << '\n';
  }
}

}  // namespace mbs
