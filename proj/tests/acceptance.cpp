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

// Acceptance run: one line per criterion, nonzero exit if any fails.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "mbs/mbs.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

namespace {

using mbs::Xoshiro256;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

mbs::LayerCapture capture_of(const Eigen::MatrixXf& x) {
  mbs::LayerCapture c;
  c.inputs = x;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1 -----------------------------------------------------------------------

Outcome allocation_fixture() {
  const auto m = mbs::load_manifest(std::string(MBS_DATA_DIR) + "/bloom20.json");
  const std::vector<std::uint64_t> want_mbs{87, 47, 37, 31, 14, 13, 7, 4, 3, 3,
                                            1,  1,  1,  1,  1,  1,  1, 1, 1, 1};
  const auto p = mbs::plan_mbs(m, 256);
  std::vector<std::uint64_t> got;
  for (const auto& e : p.counts) got.push_back(e.count);
  if (got != want_mbs) return {false, "MBS column differs"};

  const auto q = mbs::plan_equal(m, 256);
  // The 16 languages with the most bytes receive the remainder.
  std::vector<std::size_t> by_bytes(m.entries.size());
  std::iota(by_bytes.begin(), by_bytes.end(), 0);
  std::stable_sort(by_bytes.begin(), by_bytes.end(),
                   [&](auto a, auto b) { return m.entries[a].byte_size > m.entries[b].byte_size; });
  int thirteens = 0;
  for (std::size_t r = 0; r < by_bytes.size(); ++r) {
    const auto c = q.counts[by_bytes[r]].count;
    if (c != (r < 16 ? 13u : 12u)) return {false, "Equal count wrong for " + m.entries[by_bytes[r]].id};
    thirteens += c == 13;
  }
  return {thirteens == 16 && q.sum() == 256, "MBS exact, Equal 16x13 + 4x12"};
}

// 2 -----------------------------------------------------------------------

Outcome metric_equivalence() {
  auto rng = Xoshiro256::keyed(2, "metric-equivalence");
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const auto rows = static_cast<Eigen::Index>(1 + rng.uniform_below(64));
    const auto cols = static_cast<Eigen::Index>(1 + rng.uniform_below(64));
    const auto n = cols + static_cast<Eigen::Index>(rng.uniform_below(64));
    const Eigen::MatrixXf w = testutil::normal_matrix(rows, cols, rng);
    const Eigen::MatrixXf x = testutil::normal_matrix(cols, n, rng);
    const auto cap = capture_of(x);

    auto h = mbs::accumulate(cap, "", false);
    h.matrix = Eigen::MatrixXd(h.matrix.diagonal().asDiagonal());
    const auto inv = mbs::dampen_invert(h, 0.0);
    if (inv.lambda != 0.0) return {false, fmt("trial %d needed dampening", t)};

    const Eigen::MatrixXd s = mbs::sparsegpt_metric(w, inv.inverse_diagonal);
    const Eigen::MatrixXd wa = mbs::wanda_metric(w, mbs::column_norms(cap));
    const Eigen::MatrixXd wa2 = wa.cwiseAbs2();
    for (Eigen::Index i = 0; i < s.size(); ++i)
      worst = std::max(worst, testutil::rel_diff(s.data()[i], wa2.data()[i]));
    for (Eigen::Index r = 0; r < rows; ++r)
      if (mbs::detail::ascending_by_score(s.row(r), 0, cols) !=
          mbs::detail::ascending_by_score(wa.row(r), 0, cols))
        return {false, fmt("argsort differs, trial %d row %ld", t, static_cast<long>(r))};
  }
  return {worst <= 1e-10, fmt("max rel diff %.2e, argsorts identical", worst)};
}

// 3 -----------------------------------------------------------------------

Outcome hessian_additivity() {
  auto rng = Xoshiro256::keyed(3, "additivity");
  for (int t = 0; t < 50; ++t) {
    const auto d = static_cast<Eigen::Index>(1 + rng.uniform_below(24));
    const auto n_runs = 1 + rng.uniform_below(5);
    mbs::LayerCapture cap;
    cap.layer_index = static_cast<int>(rng.uniform_below(3));
    std::vector<Eigen::MatrixXf> blocks;
    Eigen::Index total = 0;
    for (std::uint64_t r = 0; r < n_runs; ++r) {
      const auto cols = static_cast<Eigen::Index>(1 + rng.uniform_below(40));
      Eigen::MatrixXf b(d, cols);
      // Dyadic entries k/8: every partial sum is exact, so order-independent.
      for (Eigen::Index i = 0; i < b.size(); ++i)
        b.data()[i] = static_cast<float>(static_cast<int>(rng.uniform_below(65)) - 32) / 8.0f;
      blocks.push_back(b);
      cap.runs.push_back({"L" + std::to_string(rng.uniform_below(3)), static_cast<std::size_t>(cols)});
      total += cols;
    }
    cap.inputs.resize(d, total);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      cap.inputs.middleCols(at, b.cols()) = b;
      at += b.cols();
    }
    const auto joint = mbs::accumulate(cap, "", false);
    const auto split = mbs::accumulate_by_language(cap);
    if (!(split.matrix.array() == joint.matrix.array()).all() || split.n_samples != joint.n_samples)
      return {false, fmt("trial %d differs", t)};
    Eigen::MatrixXd parts = Eigen::MatrixXd::Zero(d, d);
    for (const auto& [lang, m] : split.per_language) parts += m;
    if (!(parts.array() == joint.matrix.array()).all())
      return {false, fmt("trial %d: per-language parts do not sum to H", t)};
  }
  return {true, "50 captures bit-exact"};
}

// 4 -----------------------------------------------------------------------

Outcome obs_optimality() {
  auto rng = Xoshiro256::keyed(4, "obs-optimality");
  double worst_single = 0;
  for (int t = 0; t < 100; ++t) {
    const auto rows = static_cast<Eigen::Index>(1 + rng.uniform_below(8));
    const auto cols = static_cast<Eigen::Index>(2 + rng.uniform_below(7));
    const auto n = cols + 8;
    const Eigen::MatrixXf w = testutil::normal_matrix(rows, cols, rng);
    const Eigen::MatrixXf x = testutil::normal_matrix(cols, n, rng);
    const auto hinv = mbs::dampen_invert(mbs::accumulate(capture_of(x), "", false), 0.0);
    const double sparsity = 1.0 / static_cast<double>(cols);
    const auto r = mbs::obs_prune(w, hinv, x, {sparsity, cols, 1});
    const auto xo = testutil::to_oracle(x);
    const auto wo = testutil::to_oracle(w);
    oracle::Mat refit = oracle::zeros(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (Eigen::Index i = 0; i < rows; ++i) {
      std::vector<std::size_t> keep;
      for (Eigen::Index j = 0; j < cols; ++j)
        if (r.mask.keep(i, j)) keep.push_back(static_cast<std::size_t>(j));
      if (keep.size() + 1 != static_cast<std::size_t>(cols)) return {false, fmt("trial %d: not one removal", t)};
      refit[static_cast<std::size_t>(i)] = oracle::least_squares_refit(wo[static_cast<std::size_t>(i)], xo, keep);
    }
    const double ref_err = oracle::layer_error(wo, refit, xo);
    worst_single = std::max(worst_single, testutil::rel_diff(r.layer_error, ref_err));
  }
  if (worst_single > 1e-6) return {false, fmt("single removal rel diff %.2e", worst_single)};

  double tightest = INFINITY;
  for (int t = 0; t < 100; ++t) {
    const Eigen::MatrixXf w = testutil::normal_matrix(4, 6, rng);
    const Eigen::MatrixXf x = testutil::normal_matrix(6, 12, rng);
    const auto hinv = mbs::dampen_invert(mbs::accumulate(capture_of(x), "", false), 0.01);
    const auto r = mbs::obs_prune(w, hinv, x, {0.5, 6, 1});
    const auto best = oracle::exhaustive_best_mask(testutil::to_oracle(w), testutil::to_oracle(x), 3);
    const double margin = (r.layer_error - best.min_error) / std::max(best.min_error, 1e-300);
    tightest = std::min(tightest, margin);
    if (margin < -1e-9) return {false, fmt("trial %d below the exhaustive optimum (%.3e)", t, margin)};
  }
  return {true, fmt("single removal max rel diff %.2e; 4x6 min margin over optimum %.2e", worst_single,
                    tightest)};
}

// 5 -----------------------------------------------------------------------

Outcome method_ordering() {
  int sg_le_wanda = 0, wanda_le_mag = 0;
  double mean_sg = 0, mean_wanda = 0, mean_mag = 0;
  constexpr int kTrials = 200;
  for (int s = 0; s < kTrials; ++s) {
    const auto l = testutil::random_layer(static_cast<std::uint64_t>(5000 + s));
    const auto cap = capture_of(l.x);
    const auto hinv = mbs::dampen_invert(mbs::accumulate(cap, "", false), 0.01);
    const double sg = mbs::obs_prune(l.w, hinv, l.x, {0.5, 32, 1}).layer_error;
    const double wa = mbs::wanda_prune(l.w, mbs::column_norms(cap), 0.5, l.x).layer_error;
    const double mag = mbs::apply_mask(l.w, mbs::magnitude_prune(l.w, 0.5), l.x).layer_error;
    sg_le_wanda += sg <= wa;
    wanda_le_mag += wa <= mag;
    mean_sg += sg / kTrials;
    mean_wanda += wa / kTrials;
    mean_mag += mag / kTrials;
  }
  const bool ok = sg_le_wanda >= 180 && wanda_le_mag >= 160 && mean_sg < mean_wanda && mean_wanda < mean_mag;
  return {ok, fmt("SparseGPT<=Wanda %d/200, Wanda<=magnitude %d/200, means %.1f < %.1f < %.1f", sg_le_wanda,
                  wanda_le_mag, mean_sg, mean_wanda, mean_mag)};
}

// 6 -----------------------------------------------------------------------

Outcome gptq_vs_rtn() {
  int wins = 0;
  for (int s = 0; s < 200; ++s) {
    const auto l = testutil::random_layer(static_cast<std::uint64_t>(6000 + s));
    const auto hinv = mbs::dampen_invert(mbs::accumulate(capture_of(l.x), "", false), 0.01);
    const double g = mbs::gptq_quantize(l.w, hinv, l.x, {3, 8, 1}).layer_error;
    const double r = mbs::rtn_quantize(l.w, 3, 8, l.x).layer_error;
    wins += g <= r;
  }
  return {wins >= 190, fmt("GPTQ<=RTN %d/200", wins)};
}

// 7 -----------------------------------------------------------------------

Outcome directional_mbs() {
  const mbs::SyntheticLanguage lang_a{"abcdefghijklmnopqrstuvwxyz ", 3, 11};
  const mbs::SyntheticLanguage lang_b{"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789", 3, 22};
  std::vector<double> b_mono, b_mbs, a_gap;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    mbs::Corpus c;
    c.add("A", mbs::Source::train, mbs::synthesize_text(lang_a, 180000, seed));
    c.add("B", mbs::Source::train, mbs::synthesize_text(lang_b, 20000, seed));
    c.add("A", mbs::Source::eval, mbs::synthesize_text(lang_a, 20000, seed + 100));
    c.add("B", mbs::Source::eval, mbs::synthesize_text(lang_b, 20000, seed + 100));
    const std::vector<mbs::MixtureEntry> mix{{"A", 0.9}, {"B", 0.1}};
    mbs::TrainOptions opt;
    opt.steps = 5000;
    opt.seed = seed;
    const auto dense = mbs::train(mbs::ModelConfig{}, mix, c, opt);

    mbs::LanguageManifest m;
    m.entries = {{"A", 180000, "", ""}, {"B", 20000, "", ""}};
    mbs::CompressionConfig cfg;
    cfg.method = mbs::Method::sparsegpt;
    cfg.sparsity = 0.5;
    cfg.seg_len = 64;
    cfg.seed = seed;
    cfg.plan = mbs::plan_mbs(m, 64);
    const auto with_mbs = mbs::compress_model(dense, cfg, c);
    cfg.plan = mbs::plan_monolingual(m, "A", 64);
    const auto with_mono = mbs::compress_model(dense, cfg, c);

    const auto eval = mbs::draw_eval_set(c, {"A", "B"}, 64, 64, seed);
    const auto r_mbs = mbs::report(dense, with_mbs.checkpoint, eval);
    const auto r_mono = mbs::report(dense, with_mono.checkpoint, eval);
    b_mbs.push_back(r_mbs.rows[1].increase_pct);
    b_mono.push_back(r_mono.rows[1].increase_pct);
    a_gap.push_back(r_mbs.rows[0].increase_pct - r_mono.rows[0].increase_pct);
    per_seed += fmt(" [B %.1f/%.1f A %+.1f]", b_mono.back(), b_mbs.back(), a_gap.back());
  }
  const double mb = median(b_mbs), mo = median(b_mono), ga = median(a_gap);
  const bool ok = mo > mb && std::abs(ga) <= 5.0;
  return {ok, fmt("median B increase mono %.2f%% vs MBS %.2f%%, median A gap %+.2f pp;", mo, mb, ga) + per_seed};
}

// 8 -----------------------------------------------------------------------

Outcome similarity_fixtures() {
  const auto d = mbs::load_distance_csv(std::string(MBS_DATA_DIR) + "/dist7b1.csv");
  const double ta = mbs::average_distance(d, "ta"), ur = mbs::average_distance(d, "ur");
  if (ta != 7.25 || ur != 15.45) return {false, fmt("averages ta %.17g ur %.17g", ta, ur)};

  auto rng = Xoshiro256::keyed(8, "similarity");
  for (int t = 0; t < 1000; ++t) {
    const auto n = 2 + rng.uniform_below(12);
    const auto dim = static_cast<Eigen::Index>(1 + rng.uniform_below(32));
    std::vector<mbs::ActivationProfile> ps;
    for (std::uint64_t i = 0; i < n; ++i) {
      Eigen::VectorXd v(dim);
      for (Eigen::Index j = 0; j < dim; ++j) v[j] = std::abs(rng.normal()) + 1e-3;
      ps.push_back({"L" + std::to_string(i), v, 1});
    }
    const auto dm = mbs::distance_matrix(ps);
    if (dm.degrees != dm.degrees.transpose() || (dm.degrees.diagonal().array() != 0.0).any())
      return {false, fmt("fuzz case %d not symmetric with zero diagonal", t)};
  }

  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto n = static_cast<Eigen::Index>(3 + rng.uniform_below(18));
    Eigen::MatrixXd p(n, 2);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-10.0, 10.0);
    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) dist(i, j) = (p.row(i) - p.row(j)).norm();
    const Eigen::MatrixXd y = mbs::mds_embed(dist, 2);
    // Orthogonal Procrustes (reflections allowed) after centering both sets.
    const Eigen::MatrixXd pc = p.rowwise() - p.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(yc.transpose() * pc, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::MatrixXd rot = svd.matrixU() * svd.matrixV().transpose();
    const double rms = std::sqrt((yc * rot - pc).squaredNorm() / static_cast<double>(n));
    worst = std::max(worst, rms);
  }
  return {worst < 1e-6, fmt("ta 7.25, ur 15.45; 1000 fuzz matrices ok; max Procrustes RMS %.2e", worst)};
}

// 9 -----------------------------------------------------------------------

mbs::ModelCheckpoint random_checkpoint(Xoshiro256& rng, bool quantized) {
  mbs::ModelConfig cfg;
  cfg.context_k = static_cast<int>(1 + rng.uniform_below(8));
  cfg.embed_dim = static_cast<int>(1 + rng.uniform_below(16));
  cfg.hidden_dim = static_cast<int>(1 + rng.uniform_below(48));
  cfg.n_hidden_layers = static_cast<int>(rng.uniform_below(4));
  auto c = mbs::initialize(cfg, rng.next());
  c.metadata = {rng.next(), rng.next(), rng.next()};
  for (auto& l : c.layers) l.bias = testutil::normal_matrix(l.bias.size(), 1, rng);
  if (quantized) {
    const int bits = static_cast<int>(2 + rng.uniform_below(7));
    const int group = static_cast<int>(1 + rng.uniform_below(16));
    for (auto& l : c.layers) {
      const Eigen::MatrixXf x = testutil::normal_matrix(l.weights.cols(), 4, rng);
      auto q = mbs::rtn_quantize(l.weights, bits, group, x);
      l.weights = q.new_weights;
      c.grids.push_back(std::move(q.grid));
    }
  }
  return c;
}

Outcome format_round_trips() {
  auto rng = Xoshiro256::keyed(9, "round-trips");
  testutil::TempDir dir;
  for (int t = 0; t < 40; ++t) {
    const bool quantized = t >= 20;
    const auto c = random_checkpoint(rng, quantized);
    const auto path = dir / ("m" + std::to_string(t) + ".bin");
    mbs::save_checkpoint(c, path);
    const auto back = mbs::load_checkpoint(path);
    if (!(back == c) || back.quantized() != quantized ||
        mbs::serialize_checkpoint(back) != mbs::serialize_checkpoint(c))
      return {false, fmt("%s checkpoint %d did not round-trip", quantized ? "quantized" : "dense", t)};
  }
  for (int t = 0; t < 20; ++t) {
    mbs::PerplexityReport rep;
    const auto n = 1 + rng.uniform_below(20);
    for (std::uint64_t i = 0; i < n; ++i) {
      const double dp = rng.uniform(1.0, 300.0), cp = dp * rng.uniform(0.9, 4.0);
      rep.rows.push_back({"lang" + std::to_string(i), dp, cp, mbs::increase_pct(dp, cp)});
    }
    std::stringstream ss;
    mbs::write_report_csv(rep, ss);
    if (mbs::read_report_csv(ss).rows != rep.rows) return {false, fmt("report %d did not re-parse", t)};
  }
  return {true, "20 dense + 20 quantized checkpoints bit-exact; 20 reports re-parse"};
}

// 10 ----------------------------------------------------------------------

Outcome report_arithmetic() {
  mbs::PerplexityReport rep;
  rep.rows.push_back({"average", 20.08, 26.28, mbs::increase_pct(20.08, 26.28)});
  const double inc = rep.increase_of_means_pct();
  std::stringstream ss;
  mbs::write_report_csv(rep, ss);
  const bool ok = std::abs(inc - 30.88) < 0.005 && std::llround(inc) == 31 &&
                  std::abs(rep.rows[0].increase_pct - inc) == 0.0;
  return {ok, fmt("increase %.4f%% (displays %lld%%)", inc, std::llround(inc))};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "MBS/Equal allocation fixture", 1, allocation_fixture},
      {2, "SparseGPT metric equals squared Wanda metric", 5, metric_equivalence},
      {3, "Hessian additivity", 5, hessian_additivity},
      {4, "OBS optimality", 30, obs_optimality},
      {5, "method ordering at 50% sparsity", 60, method_ordering},
      {6, "GPTQ beats RTN", 60, gptq_vs_rtn},
      {7, "directional MBS reproduction", 600, directional_mbs},
      {8, "similarity fixtures", 10, similarity_fixtures},
      {9, "format round-trips", 5, format_round_trips},
      {10, "report arithmetic fixture", 1, report_arithmetic},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("[%s] criterion %d: %s -- %s (%.2fs, budget %.0fs%s)\n", pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
