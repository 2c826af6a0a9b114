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

// Toy byte-level language model: a k-gram MLP.
//
//   x0 = [emb(t_1); ...; emb(t_k)]                 (k * embed_dim)
//   h_l = relu(W_l h_{l-1} + b_l)                  hidden layers
//   p   = softmax(W_out h_L + b_out)               (256)
//
// Every linear layer is a compression target; the embedding table is not.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbs/corpus.hpp"
#include "mbs/error.hpp"
#include "mbs/grid.hpp"

namespace mbs {

struct ModelConfig {
  int vocab_size = kVocabSize;
  int context_k = 8;
  int embed_dim = 32;
  int hidden_dim = 128;
  int n_hidden_layers = 2;

  int input_dim() const { return context_k * embed_dim; }
  int n_linear() const { return n_hidden_layers + 1; }

  int layer_in(int layer) const { return layer == 0 ? input_dim() : hidden_dim; }
  int layer_out(int layer) const {
    return layer == n_hidden_layers ? vocab_size : hidden_dim;
  }

  void validate() const {
    if (vocab_size != kVocabSize)
      throw ConfigError("vocab_size must be 256, got " + std::to_string(vocab_size));
    if (context_k < 1 || embed_dim < 1 || hidden_dim < 1 || n_hidden_layers < 0)
      throw ConfigError("model dimensions must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct LinearLayer {
  Eigen::MatrixXf weights;  // out x in
  Eigen::VectorXf bias;     // out
};

struct CheckpointMetadata {
  std::uint64_t seed = 0;
  std::uint64_t train_steps = 0;
  std::uint64_t corpus_fingerprint = 0;

  bool operator==(const CheckpointMetadata&) const = default;
};

template <class A, class B>
bool same_values(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.derived().array() == b.derived().array()).all();
}

struct ModelCheckpoint {
  ModelConfig config;
  Eigen::MatrixXf embedding;  // vocab x embed_dim
  std::vector<LinearLayer> layers;
  CheckpointMetadata metadata;
  std::vector<QuantGrid> grids;  // one per layer when quantized, else empty

  bool quantized() const { return !grids.empty(); }

  static ModelCheckpoint zeros(const ModelConfig& config) {
    config.validate();
    ModelCheckpoint c;
    c.config = config;
    c.embedding = Eigen::MatrixXf::Zero(config.vocab_size, config.embed_dim);
    for (int l = 0; l < config.n_linear(); ++l)
      c.layers.push_back({Eigen::MatrixXf::Zero(config.layer_out(l), config.layer_in(l)),
                          Eigen::VectorXf::Zero(config.layer_out(l))});
    return c;
  }

  void validate() const {
    config.validate();
    if (embedding.rows() != config.vocab_size || embedding.cols() != config.embed_dim)
      throw ConfigError("checkpoint: embedding shape does not match config");
    if (static_cast<int>(layers.size()) != config.n_linear())
      throw ConfigError("checkpoint: expected " + std::to_string(config.n_linear()) +
                        " linear layers, found " + std::to_string(layers.size()));
    for (int l = 0; l < config.n_linear(); ++l) {
      const auto& L = layers[static_cast<std::size_t>(l)];
      if (L.weights.rows() != config.layer_out(l) || L.weights.cols() != config.layer_in(l) ||
          L.bias.size() != config.layer_out(l))
        throw ConfigError("checkpoint: layer " + std::to_string(l) +
                          " breaks the shape chain");
      if (!L.weights.allFinite() || !L.bias.allFinite())
        throw RuntimeError("checkpoint: layer " + std::to_string(l) +
                           " has non-finite entries");
    }
    if (!embedding.allFinite())
      throw RuntimeError("checkpoint: embedding has non-finite entries");
    if (!grids.empty() && grids.size() != layers.size())
      throw ConfigError("checkpoint: grid section must cover every layer");
  }

  friend bool operator==(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    if (!(a.config == b.config) || !(a.metadata == b.metadata) || a.grids != b.grids ||
        a.layers.size() != b.layers.size() || !same_values(a.embedding, b.embedding))
      return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
      if (!same_values(a.layers[l].weights, b.layers[l].weights) ||
          !same_values(a.layers[l].bias, b.layers[l].bias))
        return false;
    return true;
  }
};

// Inputs observed by one linear layer, one column per context window.
struct LayerCapture {
  struct Run {
    std::string lang_id;
    std::size_t columns = 0;
  };

  int layer_index = 0;
  Eigen::MatrixXf inputs;  // in_dim x n_samples
  std::vector<Run> runs;   // consecutive column ranges by language

  std::size_t n_samples() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Windows with a next-token target: positions [i, i+k) predicting t[i+k].
inline std::size_t window_count(std::size_t length, int context_k) {
  const auto k = static_cast<std::size_t>(context_k);
  return length > k ? length - k : 0;
}

namespace detail {

inline constexpr Eigen::Index kBatchColumns = 256;

struct Window {
  const Segment* segment;
  std::size_t start;
};

inline std::vector<Window> enumerate_windows(std::span<const Segment> segments, int k) {
  std::vector<Window> out;
  for (const auto& s : segments)
    for (std::size_t i = 0; i < window_count(s.length(), k); ++i) out.push_back({&s, i});
  return out;
}

inline void embed_into(const ModelCheckpoint& ckpt, std::span<const Token> context,
                       Eigen::Ref<Eigen::VectorXf> out) {
  const int e = ckpt.config.embed_dim;
  for (int p = 0; p < ckpt.config.context_k; ++p)
    out.segment(p * e, e) = ckpt.embedding.row(context[static_cast<std::size_t>(p)]).transpose();
}

// Runs layers [0, stop) on a batch; returns the input seen by layer `stop`
// (or the logits when stop == n_linear).
inline Eigen::MatrixXf propagate(const ModelCheckpoint& ckpt, Eigen::MatrixXf x, int stop) {
  const int last = ckpt.config.n_linear() - 1;
  for (int l = 0; l < stop; ++l) {
    const auto& L = ckpt.layers[static_cast<std::size_t>(l)];
    Eigen::MatrixXf z = L.weights * x;
    z.colwise() += L.bias;
    if (l < last) z = z.cwiseMax(0.0f);
    x = std::move(z);
  }
  return x;
}

inline Eigen::MatrixXf embed_batch(const ModelCheckpoint& ckpt,
                                   std::span<const Window> windows) {
  Eigen::MatrixXf x(ckpt.config.input_dim(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t c = 0; c < windows.size(); ++c) {
    const auto& w = windows[c];
    embed_into(ckpt,
               std::span<const Token>(w.segment->tokens).subspan(
                   w.start, static_cast<std::size_t>(ckpt.config.context_k)),
               x.col(static_cast<Eigen::Index>(c)));
  }
  return x;
}

// log p(target) per column, softmax evaluated in f64.
inline double log_prob(const Eigen::Ref<const Eigen::VectorXf>& logits, int target) {
  const double m = static_cast<double>(logits.maxCoeff());
  double s = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) s += std::exp(static_cast<double>(logits[i]) - m);
  return static_cast<double>(logits[target]) - m - std::log(s);
}

}  // namespace detail

/// Next-token distribution for a single context of exactly context_k tokens.
inline Eigen::VectorXd forward(const ModelCheckpoint& ckpt, std::span<const Token> context) {
  if (static_cast<int>(context.size()) != ckpt.config.context_k)
    throw ConfigError("forward: context has " + std::to_string(context.size()) +
                      " tokens, model expects " + std::to_string(ckpt.config.context_k));
  Eigen::MatrixXf x(ckpt.config.input_dim(), 1);
  detail::embed_into(ckpt, context, x.col(0));
  const Eigen::VectorXd logits = detail::propagate(ckpt, std::move(x), ckpt.config.n_linear()).col(0).cast<double>();
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp().matrix();
  return p / p.sum();
}

/// Input matrix of one linear layer over every window of every segment.
/// Column order: segment order, then position order.
inline LayerCapture capture_layer(const ModelCheckpoint& ckpt, std::span<const Segment> segments,
                                  int layer) {
  if (segments.empty()) throw ConfigError("capture: empty segment list");
  if (layer < 0 || layer >= ckpt.config.n_linear())
    throw ConfigError("capture: no linear layer " + std::to_string(layer));
  const auto windows = detail::enumerate_windows(segments, ckpt.config.context_k);
  if (windows.empty()) throw ConfigError("capture: segments are shorter than the context");

  LayerCapture cap;
  cap.layer_index = layer;
  cap.inputs.resize(ckpt.config.layer_in(layer), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t b = 0; b < windows.size(); b += detail::kBatchColumns) {
    const auto n = std::min<std::size_t>(detail::kBatchColumns, windows.size() - b);
    const std::span<const detail::Window> batch(windows.data() + b, n);
    cap.inputs.middleCols(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n)) =
        detail::propagate(ckpt, detail::embed_batch(ckpt, batch), layer);
  }
  for (const auto& s : segments) {
    const auto n = window_count(s.length(), ckpt.config.context_k);
    if (n == 0) continue;
    if (!cap.runs.empty() && cap.runs.back().lang_id == s.lang_id)
      cap.runs.back().columns += n;
    else
      cap.runs.push_back({s.lang_id, n});
  }
  return cap;
}

inline std::vector<LayerCapture> capture_inputs(const ModelCheckpoint& ckpt,
                                                std::span<const Segment> segments) {
  std::vector<LayerCapture> out;
  for (int l = 0; l < ckpt.config.n_linear(); ++l) out.push_back(capture_layer(ckpt, segments, l));
  return out;
}

/// Mean negative log-likelihood (nats) over every predictable token.
inline double mean_nll(const ModelCheckpoint& ckpt, std::span<const Segment> segments) {
  const auto windows = detail::enumerate_windows(segments, ckpt.config.context_k);
  if (windows.empty()) throw ConfigError("perplexity: no predictable tokens");
  double total = 0;
  for (std::size_t b = 0; b < windows.size(); b += detail::kBatchColumns) {
    const auto n = std::min<std::size_t>(detail::kBatchColumns, windows.size() - b);
    const std::span<const detail::Window> batch(windows.data() + b, n);
    const Eigen::MatrixXf logits =
        detail::propagate(ckpt, detail::embed_batch(ckpt, batch), ckpt.config.n_linear());
    for (std::size_t c = 0; c < n; ++c) {
      const auto& w = batch[c];
      const int target = w.segment->tokens[w.start + static_cast<std::size_t>(ckpt.config.context_k)];
      total -= detail::log_prob(logits.col(static_cast<Eigen::Index>(c)), target);
    }
  }
  return total / static_cast<double>(windows.size());
}

/// exp(mean -ln p(token | previous k tokens)).
inline double perplexity(const ModelCheckpoint& ckpt, std::span<const Segment> segments) {
  return std::exp(mean_nll(ckpt, segments));
}

}  // namespace mbs
