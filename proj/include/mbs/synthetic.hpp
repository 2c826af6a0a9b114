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

// Synthetic "languages" for desk-scale experiments: first-order Markov chains
// over a private alphabet. Each symbol has a few successors with random
// weights, so text is learnable by a short-context model yet distinct per
// language.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mbs/error.hpp"
#include "mbs/rng.hpp"

namespace mbs {

struct SyntheticLanguage {
  std::string alphabet;
  int successors = 3;
  std::uint64_t grammar_seed = 0;
};

inline std::string synthesize_text(const SyntheticLanguage& lang,
                                   std::size_t n_bytes, std::uint64_t seed) {
  const auto n = lang.alphabet.size();
  if (n < 2) throw ConfigError("synthetic alphabet needs at least 2 symbols");
  const auto fanout = static_cast<std::size_t>(
      std::max(1, std::min<int>(lang.successors, static_cast<int>(n))));

  // Grammar: successor table with cumulative weights.
  Xoshiro256 g(lang.grammar_seed);
  std::vector<std::vector<std::size_t>> next(n);
  std::vector<std::vector<double>> cdf(n);
  for (std::size_t s = 0; s < n; ++s) {
    double total = 0;
    for (std::size_t k = 0; k < fanout; ++k) {
      next[s].push_back(static_cast<std::size_t>(g.uniform_below(n)));
      total += 0.2 + g.uniform01();
      cdf[s].push_back(total);
    }
    for (auto& c : cdf[s]) c /= total;
  }

  Xoshiro256 r(seed ^ lang.grammar_seed);
  std::string out;
  out.reserve(n_bytes);
  std::size_t state = static_cast<std::size_t>(r.uniform_below(n));
  while (out.size() < n_bytes) {
    out.push_back(lang.alphabet[state]);
    const double u = r.uniform01();
    std::size_t k = 0;
    while (k + 1 < fanout && u > cdf[state][k]) ++k;
    state = next[state][k];
  }
  return out;
}

}  // namespace mbs
