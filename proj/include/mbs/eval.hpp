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

// Whole-model compression driver and per-language perplexity reports.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbs/corpus.hpp"
#include "mbs/error.hpp"
#include "mbs/hessian.hpp"
#include "mbs/model.hpp"
#include "mbs/prune.hpp"
#include "mbs/quantize.hpp"
#include "mbs/sampler.hpp"

namespace mbs {

enum class Method { magnitude, wanda, sparsegpt, gptq, rtn };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::magnitude: return "magnitude";
    case Method::wanda: return "wanda";
    case Method::sparsegpt: return "sparsegpt";
    case Method::gptq: return "gptq";
    case Method::rtn: return "rtn";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  for (auto m : {Method::magnitude, Method::wanda, Method::sparsegpt, Method::gptq, Method::rtn})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown compression method '" + std::string(s) + "'");
}

inline bool is_pruning(Method m) {
  return m == Method::magnitude || m == Method::wanda || m == Method::sparsegpt;
}

struct CompressionConfig {
  Method method = Method::sparsegpt;
  double sparsity = 0.5;     // pruning methods
  int bits = 3;              // quantization methods
  int group_size = 8;        // quantization methods
  double lambda_rel = 0.01;
  int block_size = 32;
  CalibrationPlan plan;
  std::size_t seg_len = 128;
  std::uint64_t seed = 0;
  bool per_language_hessian = false;
  int threads = 1;

  void validate() const {
    if (is_pruning(method)) {
      if (!(sparsity >= 0.0 && sparsity < 1.0))
        throw ConfigError("sparsity must be in [0, 1), got " + std::to_string(sparsity));
    } else {
      if (bits < 2 || bits > 16) throw ConfigError("bits must be in [2, 16]");
      if (group_size < 1) throw ConfigError("group size must be >= 1");
    }
    if (lambda_rel < 0) throw ConfigError("lambda must be non-negative");
    if (block_size < 1) throw ConfigError("block size must be >= 1");
    if (seg_len < 1) throw ConfigError("segment length must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    validate_plan(plan);
  }
};

inline nlohmann::ordered_json config_to_json(const CompressionConfig& c) {
  nlohmann::ordered_json j;
  j["method"] = to_string(c.method);
  if (is_pruning(c.method)) {
    j["sparsity"] = c.sparsity;
  } else {
    j["bits"] = c.bits;
    j["group_size"] = c.group_size;
  }
  j["lambda_rel"] = c.lambda_rel;
  j["block_size"] = c.block_size;
  j["seg_len"] = c.seg_len;
  j["seed"] = c.seed;
  j["per_language_hessian"] = c.per_language_hessian;
  j["plan"] = plan_to_json(c.plan);
  return j;
}

struct LayerStats {
  int layer_index = 0;
  std::size_t n_samples = 0;
  double layer_error = 0;
  double lambda = 0;
  std::size_t per_language_parts = 0;
};

struct CompressionOutcome {
  ModelCheckpoint checkpoint;
  std::vector<LayerStats> layers;
  std::vector<SparsityMask> masks;  // pruning methods only
};

/// Compresses every linear layer in order. Each layer's calibration inputs are
/// captured from the partially compressed model, so later layers see the
/// activations produced by already-compressed earlier layers. The embedding
/// table is never touched.
inline CompressionOutcome compress_model(const ModelCheckpoint& dense, const CompressionConfig& cfg,
                                         const Corpus& corpus) {
  cfg.validate();
  dense.validate();
  const auto segments = materialize(cfg.plan, corpus, cfg.seg_len, cfg.seed);

  CompressionOutcome out;
  out.checkpoint = dense;
  out.checkpoint.grids.clear();
  std::vector<QuantGrid> grids;
  for (int l = 0; l < dense.config.n_linear(); ++l) {
    try {
      const auto cap = capture_layer(out.checkpoint, segments, l);
      auto& weights = out.checkpoint.layers[static_cast<std::size_t>(l)].weights;
      const Eigen::MatrixXf original = weights;
      LayerStats stats{l, cap.n_samples(), 0, 0, 0};

      auto hessian_inverse = [&] {
        const auto h = cfg.per_language_hessian ? accumulate_by_language(cap)
                                                : accumulate(cap, "", false);
        stats.per_language_parts = h.per_language.size();
        auto inv = dampen_invert(h, cfg.lambda_rel);
        stats.lambda = inv.lambda;
        return inv;
      };

      switch (cfg.method) {
        case Method::magnitude: {
          auto mask = magnitude_prune(original, cfg.sparsity);
          mask.layer_index = l;
          auto r = apply_mask(original, std::move(mask), cap.inputs);
          weights = r.new_weights;
          stats.layer_error = r.layer_error;
          out.masks.push_back(std::move(r.mask));
          break;
        }
        case Method::wanda: {
          auto r = wanda_prune(original, column_norms(cap), cfg.sparsity, cap.inputs);
          r.mask.layer_index = l;
          weights = r.new_weights;
          stats.layer_error = r.layer_error;
          out.masks.push_back(std::move(r.mask));
          break;
        }
        case Method::sparsegpt: {
          auto r = obs_prune(original, hessian_inverse(), cap.inputs,
                             {cfg.sparsity, cfg.block_size, cfg.threads});
          weights = r.new_weights;
          stats.layer_error = r.layer_error;
          out.masks.push_back(std::move(r.mask));
          break;
        }
        case Method::gptq: {
          auto r = gptq_quantize(original, hessian_inverse(), cap.inputs,
                                 {cfg.bits, cfg.group_size, cfg.threads});
          weights = r.new_weights;
          stats.layer_error = r.layer_error;
          grids.push_back(std::move(r.grid));
          break;
        }
        case Method::rtn: {
          auto r = rtn_quantize(original, cfg.bits, cfg.group_size, cap.inputs);
          weights = r.new_weights;
          stats.layer_error = r.layer_error;
          grids.push_back(std::move(r.grid));
          break;
        }
      }
      out.layers.push_back(stats);
    } catch (const ConfigError& e) {
      throw ConfigError("layer " + std::to_string(l) + ": " + e.what());
    } catch (const RuntimeError& e) {
      throw RuntimeError("layer " + std::to_string(l) + ": " + e.what());
    }
  }
  out.checkpoint.grids = std::move(grids);
  out.checkpoint.validate();
  return out;
}

struct ReportRow {
  std::string lang_id;
  double dense_ppl = 0;
  double compressed_ppl = 0;
  double increase_pct = 0;

  bool operator==(const ReportRow&) const = default;
};

inline double increase_pct(double dense_ppl, double compressed_ppl) {
  return (compressed_ppl / dense_ppl - 1.0) * 100.0;
}

struct PerplexityReport {
  std::vector<ReportRow> rows;
  nlohmann::ordered_json config;  // echo of the run configuration

  double mean_dense() const { return mean(&ReportRow::dense_ppl); }
  double mean_compressed() const { return mean(&ReportRow::compressed_ppl); }
  double mean_increase_pct() const { return mean(&ReportRow::increase_pct); }
  // Increase of the averaged perplexities, as shown in summary tables.
  double increase_of_means_pct() const { return increase_pct(mean_dense(), mean_compressed()); }

 private:
  double mean(double ReportRow::*field) const {
    if (rows.empty()) return 0;
    double s = 0;
    for (const auto& r : rows) s += r.*field;
    return s / static_cast<double>(rows.size());
  }
};

using EvalSet = std::vector<std::pair<std::string, std::vector<Segment>>>;

inline EvalSet draw_eval_set(const Corpus& corpus, const std::vector<std::string>& langs,
                             std::size_t seg_len, std::size_t count, std::uint64_t seed) {
  EvalSet out;
  for (const auto& lang : langs)
    out.emplace_back(lang, draw_segments(corpus, lang, Source::eval, seg_len, count, seed));
  return out;
}

inline PerplexityReport report(const ModelCheckpoint& dense, const ModelCheckpoint& compressed,
                               const EvalSet& eval) {
  if (!(dense.config == compressed.config))
    throw ConfigError("report: dense and compressed checkpoints have different configs");
  PerplexityReport rep;
  for (const auto& [lang, segments] : eval) {
    if (segments.empty()) throw ConfigError("report: no eval segments for '" + lang + "'");
    const double d = perplexity(dense, segments);
    const double c = perplexity(compressed, segments);
    rep.rows.push_back({lang, d, c, increase_pct(d, c)});
  }
  return rep;
}

// CSV: lang,dense_ppl,compressed_ppl,increase_pct; a final "average" row holds
// the mean perplexities and the increase of those means.
inline void write_report_csv(const PerplexityReport& rep, std::ostream& out) {
  out << std::setprecision(17);
  out << "lang,dense_ppl,compressed_ppl,increase_pct\n";
  for (const auto& r : rep.rows)
    out << r.lang_id << ',' << r.dense_ppl << ',' << r.compressed_ppl << ',' << r.increase_pct << '\n';
  out << "average," << rep.mean_dense() << ',' << rep.mean_compressed() << ','
      << rep.increase_of_means_pct() << '\n';
}

inline PerplexityReport read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "lang,dense_ppl,compressed_ppl,increase_pct")
    throw ConfigError("report CSV: bad header");
  PerplexityReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string lang, a, b, c;
    if (!std::getline(ss, lang, ',') || !std::getline(ss, a, ',') || !std::getline(ss, b, ',') ||
        !std::getline(ss, c))
      throw ConfigError("report CSV: malformed line '" + line + "'");
    if (lang == "average") break;
    rep.rows.push_back({lang, std::stod(a), std::stod(b), std::stod(c)});
  }
  return rep;
}

}  // namespace mbs
