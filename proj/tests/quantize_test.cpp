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

#include <gtest/gtest.h>

#include <array>

#include "mbs/hessian.hpp"
#include "mbs/quantize.hpp"
#include "test_util.hpp"

namespace {

using mbs::GridParams;

mbs::DampenedInverse inverse_of(const Eigen::MatrixXf& x) {
  mbs::LayerCapture c;
  c.inputs = x;
  return mbs::dampen_invert(mbs::accumulate(c, "A"), 0.01);
}

TEST(FitGrid, IntegersOnEightLevels) {
  const std::array<float, 8> v{0, 1, 2, 3, 4, 5, 6, 7};
  const auto g = mbs::fit_grid(v, 3);
  EXPECT_EQ(g.scale, 1.0f);
  EXPECT_EQ(g.zero_point, 0.0f);
  for (float x : v) EXPECT_EQ(mbs::dequantize(g, mbs::quantize_level(x, g, 3)), x);
}

TEST(FitGrid, ConstantGroup) {
  const std::array<float, 2> v{5, 5};
  const auto g = mbs::fit_grid(v, 3);
  EXPECT_EQ(g.scale, 1.0f);
  EXPECT_EQ(mbs::dequantize(g, mbs::quantize_level(5.0f, g, 3)), 5.0f);
}

TEST(FitGrid, TwoBitSymmetricRange) {
  const std::array<float, 2> v{-1, 1};
  const auto g = mbs::fit_grid(v, 2);
  EXPECT_FLOAT_EQ(g.scale, 2.0f / 3.0f);
  EXPECT_EQ(g.zero_point, -1.0f);
  EXPECT_FLOAT_EQ(mbs::dequantize(g, 1), -1.0f / 3.0f);
  EXPECT_FLOAT_EQ(mbs::dequantize(g, 2), 1.0f / 3.0f);
  EXPECT_FLOAT_EQ(mbs::dequantize(g, 3), 1.0f);
  EXPECT_THROW(mbs::fit_grid(std::span<const float>{}, 3), mbs::ConfigError);
}

TEST(QuantizeLevel, TiesGoToEvenIndex) {
  const GridParams g{1.0f, 0.0f};
  EXPECT_EQ(mbs::quantize_level(2.5f, g, 3), 2);
  EXPECT_EQ(mbs::quantize_level(3.5f, g, 3), 4);
  EXPECT_EQ(mbs::quantize_level(-3.0f, g, 3), 0);
  EXPECT_EQ(mbs::quantize_level(99.0f, g, 3), 7);
}

TEST(Rtn, FixedPointOnGrid) {
  Eigen::MatrixXf w(2, 8);
  w << 0, 1, 2, 3, 4, 5, 6, 7,  //
      -1.5f, -1, -0.5f, 0, 0.5f, 1, 1.5f, 2;
  const auto r = mbs::rtn_quantize(w, 3, 8, Eigen::MatrixXf::Identity(8, 8));
  EXPECT_EQ(r.new_weights, w);
  EXPECT_EQ(r.layer_error, 0.0);
}

TEST(Rtn, SingleWeight) {
  Eigen::MatrixXf w(1, 1);
  w << 0.3f;
  const auto r = mbs::rtn_quantize(w, 3, 4, Eigen::MatrixXf::Ones(1, 1));
  EXPECT_EQ(r.new_weights(0, 0), 0.3f);
}

TEST(Rtn, MatchesNearestLevelOracle) {
  auto rng = mbs::Xoshiro256::keyed(1, "rtn");
  const Eigen::MatrixXf w = testutil::normal_matrix(4, 8, rng);
  const auto r = mbs::rtn_quantize(w, 3, 4, Eigen::MatrixXf::Identity(8, 8));
  ASSERT_EQ(r.grid.groups(), 2);
  for (int row = 0; row < 4; ++row)
    for (int c = 0; c < 8; ++c) {
      const int g = c / 4;
      const double scale = r.grid.scales[r.grid.cell(row, g)];
      const double zp = r.grid.zero_points[r.grid.cell(row, g)];
      const int level = oracle::nearest_level(w(row, c), scale, zp, 3);
      EXPECT_EQ(r.new_weights(row, c), r.grid.dequantize(row, g, level));
    }
  EXPECT_TRUE(mbs::on_grid(r.new_weights, r.grid));
}

TEST(Rtn, GroupCount) {
  const auto r = mbs::rtn_quantize(Eigen::MatrixXf::Random(3, 10), 3, 4, Eigen::MatrixXf::Identity(10, 10));
  EXPECT_EQ(r.grid.groups(), 3);
  EXPECT_EQ(r.grid.scales.size(), 9u);
}

TEST(Gptq, DiagonalHessianEqualsSequentialRtn) {
  const auto l = testutil::random_layer(2);
  const Eigen::MatrixXd d = (l.x.cast<double>() * l.x.cast<double>().transpose()).diagonal().asDiagonal();
  mbs::LayerHessian h;
  h.matrix = d;
  const auto g = mbs::gptq_quantize(l.w, mbs::dampen_invert(h, 0.01), l.x, {3, 8, 1});
  const auto r = mbs::rtn_quantize(l.w, 3, 8, l.x);
  EXPECT_LT((g.new_weights - r.new_weights).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(g.grid, r.grid);
}

TEST(Gptq, IdentityHessianEqualsRtn) {
  const auto l = testutil::random_layer(3);
  mbs::LayerHessian h;
  h.matrix = Eigen::MatrixXd::Identity(16, 16);
  const auto g = mbs::gptq_quantize(l.w, mbs::dampen_invert(h, 0.0), l.x, {3, 4, 1});
  const auto r = mbs::rtn_quantize(l.w, 3, 4, l.x);
  EXPECT_EQ(g.new_weights, r.new_weights);
}

TEST(Gptq, ExactGridLeavesWeightsUnchanged) {
  // Integer weights in [0, 255] with 8 bits: each group's grid is unit-spaced.
  auto rng = mbs::Xoshiro256::keyed(4, "exact");
  Eigen::MatrixXf w(4, 8);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(rng.uniform_below(256));
  for (Eigen::Index r = 0; r < 4; ++r) {
    w(r, 0) = 0;
    w(r, 7) = 255;
  }
  const auto l = testutil::random_layer(4, 4, 8, 32);
  const auto g = mbs::gptq_quantize(w, inverse_of(l.x), l.x, {8, 8, 1});
  EXPECT_EQ(g.new_weights, w);
  EXPECT_EQ(g.layer_error, 0.0);
}

TEST(Gptq, OnGridAndDeterministic) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto l = testutil::random_layer(10 + s, 8, 20, 64);
    const auto inv = inverse_of(l.x);
    const auto a = mbs::gptq_quantize(l.w, inv, l.x, {3, 8, 1});
    const auto b = mbs::gptq_quantize(l.w, inv, l.x, {3, 8, 3});
    EXPECT_TRUE(mbs::on_grid(a.new_weights, a.grid));
    EXPECT_EQ(a.grid.groups(), 3);
    EXPECT_EQ(a.new_weights, b.new_weights);
    EXPECT_EQ(a.grid, b.grid);
  }
}

TEST(Gptq, DimensionMismatch) {
  const auto l = testutil::random_layer(5);
  EXPECT_THROW(mbs::gptq_quantize(l.w, inverse_of(l.x.topRows(4)), l.x, {3, 8, 1}), mbs::ConfigError);
}

}  // namespace
