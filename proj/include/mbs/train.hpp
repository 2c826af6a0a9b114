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

// Minimal trainer for the toy model: mean token cross-entropy, hand-written
// backprop, Adam. Single-threaded and fully determined by the seed.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbs/corpus.hpp"
#include "mbs/error.hpp"
#include "mbs/model.hpp"
#include "mbs/rng.hpp"

namespace mbs {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Trainable parameters in a chosen precision.
template <class S>
struct Params {
  Mat<S> embedding;
  std::vector<Mat<S>> weights;
  std::vector<Vec<S>> biases;

  static Params zeros_like(const ModelCheckpoint& ckpt) {
    Params p;
    p.embedding = Mat<S>::Zero(ckpt.embedding.rows(), ckpt.embedding.cols());
    for (const auto& l : ckpt.layers) {
      p.weights.push_back(Mat<S>::Zero(l.weights.rows(), l.weights.cols()));
      p.biases.push_back(Vec<S>::Zero(l.bias.size()));
    }
    return p;
  }

  static Params of(const ModelCheckpoint& ckpt) {
    Params p;
    p.embedding = ckpt.embedding.cast<S>();
    for (const auto& l : ckpt.layers) {
      p.weights.push_back(l.weights.cast<S>());
      p.biases.push_back(l.bias.cast<S>());
    }
    return p;
  }

  void store_into(ModelCheckpoint& ckpt) const {
    ckpt.embedding = embedding.template cast<float>();
    for (std::size_t l = 0; l < weights.size(); ++l) {
      ckpt.layers[l].weights = weights[l].template cast<float>();
      ckpt.layers[l].bias = biases[l].template cast<float>();
    }
  }

  static Params zeros_shaped(const Params& other) {
    Params p;
    p.embedding = Mat<S>::Zero(other.embedding.rows(), other.embedding.cols());
    for (std::size_t l = 0; l < other.weights.size(); ++l) {
      p.weights.push_back(Mat<S>::Zero(other.weights[l].rows(), other.weights[l].cols()));
      p.biases.push_back(Vec<S>::Zero(other.biases[l].size()));
    }
    return p;
  }
};

// contexts: B*k tokens, window after window; targets: B tokens.
struct TrainingBatch {
  std::vector<Token> contexts;
  std::vector<Token> targets;

  std::size_t size() const { return targets.size(); }
};

/// Mean cross-entropy of the batch. When grad is non-null it receives
/// d(loss)/d(params) (same shapes as params).
template <class S>
double loss_and_gradients(const Params<S>& p, const ModelConfig& cfg, const TrainingBatch& batch,
                          Params<S>* grad) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int k = cfg.context_k, e = cfg.embed_dim, L = cfg.n_linear();
  if (B == 0) throw ConfigError("empty training batch");

  std::vector<Mat<S>> acts;  // input of each linear layer
  Mat<S> x0(cfg.input_dim(), B);
  for (Eigen::Index c = 0; c < B; ++c)
    for (int j = 0; j < k; ++j)
      x0.col(c).segment(j * e, e) =
          p.embedding.row(batch.contexts[static_cast<std::size_t>(c * k + j)]).transpose();
  acts.push_back(std::move(x0));
  Mat<S> z;
  for (int l = 0; l < L; ++l) {
    z = p.weights[static_cast<std::size_t>(l)] * acts.back();
    z.colwise() += p.biases[static_cast<std::size_t>(l)];
    if (l < L - 1) acts.push_back(z.cwiseMax(S(0)));
  }

  double loss = 0;
  Mat<S> dz(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < B; ++c) {
    const Eigen::VectorXd logits = z.col(c).template cast<double>();
    const double m = logits.maxCoeff();
    Eigen::VectorXd q = (logits.array() - m).exp().matrix();
    const double s = q.sum();
    q /= s;
    const int t = batch.targets[static_cast<std::size_t>(c)];
    loss -= logits[t] - m - std::log(s);
    q[t] -= 1.0;
    dz.col(c) = (q / static_cast<double>(B)).template cast<S>();
  }
  loss /= static_cast<double>(B);
  if (!grad) return loss;

  *grad = Params<S>::zeros_shaped(p);
  for (int l = L - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    grad->weights[li] = dz * acts[li].transpose();
    grad->biases[li] = dz.rowwise().sum();
    Mat<S> da = p.weights[li].transpose() * dz;
    if (l > 0)
      dz = (acts[li].array() > S(0)).select(da, S(0));
    else
      dz = std::move(da);
  }
  for (Eigen::Index c = 0; c < B; ++c)
    for (int j = 0; j < k; ++j)
      grad->embedding.row(batch.contexts[static_cast<std::size_t>(c * k + j)]) +=
          dz.col(c).segment(j * e, e).transpose();
  return loss;
}

struct MixtureEntry {
  std::string lang_id;
  double weight = 1.0;
};

struct TrainOptions {
  std::uint64_t steps = 1000;
  std::uint64_t seed = 0;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::function<void(std::uint64_t step, double loss)> on_step;
};

inline std::uint64_t corpus_fingerprint(const Corpus& corpus,
                                        std::span<const MixtureEntry> mixture) {
  std::uint64_t h = fnv1a64("");
  for (const auto& m : mixture) {
    h = fnv1a64(m.lang_id, h);
    h = fnv1a64(std::string_view("\0", 1), h);
    const auto& t = corpus.tokens(m.lang_id, Source::train);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()), t.size()), h);
  }
  return h;
}

// Initial weights: embedding U(-1, 1); linear U(+-1/sqrt(in)); biases 0.
inline ModelCheckpoint initialize(const ModelConfig& config, std::uint64_t seed) {
  auto ckpt = ModelCheckpoint::zeros(config);
  auto rng = Xoshiro256::keyed(seed, "init");
  for (Eigen::Index i = 0; i < ckpt.embedding.size(); ++i)
    ckpt.embedding.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (auto& layer : ckpt.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
      layer.weights.data()[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  ckpt.metadata.seed = seed;
  return ckpt;
}

// Windows sampled language-first by mixture weight, then uniformly in that
// language's train stream.
inline TrainingBatch sample_batch(const Corpus& corpus, std::span<const MixtureEntry> mixture,
                                  int context_k, int batch_size, Xoshiro256& rng) {
  double total_weight = 0;
  for (const auto& m : mixture) total_weight += m.weight;
  TrainingBatch b;
  const auto k = static_cast<std::size_t>(context_k);
  b.contexts.reserve(k * static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const double u = rng.uniform01() * total_weight;
    std::size_t pick = 0;
    double acc = mixture[0].weight;
    while (pick + 1 < mixture.size() && u >= acc) acc += mixture[++pick].weight;
    const auto& tokens = corpus.tokens(mixture[pick].lang_id, Source::train);
    const auto start = static_cast<std::size_t>(rng.uniform_below(tokens.size() - k));
    b.contexts.insert(b.contexts.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start),
                      tokens.begin() + static_cast<std::ptrdiff_t>(start + k));
    b.targets.push_back(tokens[start + k]);
  }
  return b;
}

inline ModelCheckpoint train(const ModelConfig& config, std::span<const MixtureEntry> mixture,
                             const Corpus& corpus, const TrainOptions& opt) {
  config.validate();
  if (mixture.empty()) throw ConfigError("train: empty mixture");
  if (opt.steps < 1) throw ConfigError("train: steps must be >= 1");
  if (opt.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  for (const auto& m : mixture) {
    if (!(m.weight > 0)) throw ConfigError("train: mixture weight for '" + m.lang_id + "' must be positive");
    if (corpus.tokens(m.lang_id, Source::train).size() <= static_cast<std::size_t>(config.context_k))
      throw RuntimeError("train: corpus for '" + m.lang_id + "' is shorter than the context");
  }

  auto ckpt = initialize(config, opt.seed);
  auto params = Params<float>::of(ckpt);
  auto m1 = Params<float>::zeros_like(ckpt);
  auto m2 = Params<float>::zeros_like(ckpt);
  Params<float> grad;
  auto rng = Xoshiro256::keyed(opt.seed, "batches");
  const auto b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
  const auto lr = static_cast<float>(opt.learning_rate), eps = static_cast<float>(opt.epsilon);

  for (std::uint64_t step = 1; step <= opt.steps; ++step) {
    const auto batch = sample_batch(corpus, mixture, config.context_k, opt.batch_size, rng);
    const double loss = loss_and_gradients(params, config, batch, &grad);
    if (opt.on_step) opt.on_step(step, loss);

    const auto c1 = static_cast<float>(1.0 - std::pow(opt.beta1, static_cast<double>(step)));
    const auto c2 = static_cast<float>(1.0 - std::pow(opt.beta2, static_cast<double>(step)));
    auto update = [&](auto& theta, const auto& g, auto& m, auto& v) {
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
      theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    update(params.embedding, grad.embedding, m1.embedding, m2.embedding);
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      update(params.weights[l], grad.weights[l], m1.weights[l], m2.weights[l]);
      update(params.biases[l], grad.biases[l], m1.biases[l], m2.biases[l]);
    }
  }

  params.store_into(ckpt);
  ckpt.metadata = {opt.seed, opt.steps, corpus_fingerprint(corpus, mixture)};
  ckpt.validate();
  return ckpt;
}

}  // namespace mbs
