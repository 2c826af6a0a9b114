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

#include <cstdint>
#include <vector>

namespace mbs {

// Asymmetric per-(row, group) quantization grid. Level l of a cell decodes to
// zero_point + scale * l, evaluated in float; stored weights are compared
// against exactly this expression.
struct QuantGrid {
  int bits = 0;
  int group_size = 0;
  int rows = 0;
  int cols = 0;
  std::vector<float> scales;       // rows x groups, row-major
  std::vector<float> zero_points;  // rows x groups, row-major

  int groups() const { return group_size > 0 ? (cols + group_size - 1) / group_size : 0; }
  int levels() const { return 1 << bits; }

  std::size_t cell(int row, int group) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(groups()) +
           static_cast<std::size_t>(group);
  }

  float dequantize(int row, int group, int level) const {
    return zero_points[cell(row, group)] +
           scales[cell(row, group)] * static_cast<float>(level);
  }

  bool operator==(const QuantGrid&) const = default;
};

}  // namespace mbs
