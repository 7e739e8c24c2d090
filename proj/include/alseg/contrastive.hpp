// Copyright 2026 The alseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ALSEG_CONTRASTIVE_HPP
#define ALSEG_CONTRASTIVE_HPP

// Contrastive pretraining of the segmentation encoder/decoder.
//
// Two augmented views of each image are pushed through the network; the
// decoder output is globally pooled, sent through a two-layer projection
// head and L2-normalised. Views (2k, 2k+1) form positive pairs and every
// other view in the batch is a negative. After pretraining, the layers
// before the pooling step initialise each active-learning cycle.

#include <cstdint>
#include <utility>
#include <vector>

#include "alseg/core.hpp"
#include "alseg/datagen.hpp"
#include "alseg/model.hpp"

namespace alseg {

template <typename Real>
struct BasicProjectionHead {
  BasicTensor<Real> w1, b1;  // F x hidden, hidden
  BasicTensor<Real> w2, b2;  // hidden x proj_dim, proj_dim

  static BasicProjectionHead zeros(std::size_t features, std::size_t hidden, std::size_t proj_dim);
  std::vector<BasicTensor<Real>*> groups() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const BasicTensor<Real>*> groups() const { return {&w1, &b1, &w2, &b2}; }
  std::size_t features() const { return w1.dim(0); }
  std::size_t hidden() const { return w1.dim(1); }
  std::size_t proj_dim() const { return w2.dim(1); }

  template <typename Other>
  BasicProjectionHead<Other> cast() const {
    return {w1.template cast<Other>(), b1.template cast<Other>(), w2.template cast<Other>(),
            b2.template cast<Other>()};
  }

  friend bool operator==(const BasicProjectionHead&, const BasicProjectionHead&) = default;
};

using ProjectionHead = BasicProjectionHead<float>;

/// He-normal weights, zero biases, drawn from `seed ^ purpose::kProjInit`.
ProjectionHead init_projection_head(std::size_t features, std::size_t hidden, std::size_t proj_dim,
                                    std::uint64_t seed);

struct AugmentConfig {
  bool crop = true;
  double crop_min_area = 0.6;
  double crop_max_area = 1.0;
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;
  /// Multiplicative brightness factor drawn from [1 - b, 1 + b].
  double brightness = 0.2;

  static AugmentConfig disabled() { return {false, 1.0, 1.0, 0.0, 0.0, 0.0}; }
  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PretrainConfig {
  double temperature = 0.5;
  std::uint32_t epochs = 100;
  std::uint32_t batch_size = 32;
  /// Peak rate; cosine-decayed to 0 over `epochs`.
  double learning_rate = 1e-3;
  std::uint32_t hidden_dim = 16;
  std::uint32_t proj_dim = 8;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double weight_decay = 1e-8;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate_at(std::uint32_t epoch) const;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

/// One augmented view: crop (area fraction in [min, max], aspect ratio in
/// [3/4, 4/3]) resized back with nearest neighbour, random flips, brightness
/// scaling, clamp to [0, 1].
Tensor augment_view(const Tensor& image, Rng& rng, const AugmentConfig& config);
std::pair<Tensor, Tensor> augment_pair(const Tensor& image, Rng& rng, const AugmentConfig& config);

/// Intermediate values of pool -> linear -> ReLU -> linear -> normalise.
template <typename Real>
struct Projection {
  std::vector<Real> pooled, hidden_pre, hidden, z, v;
  Real norm = 0;
  /// z was exactly zero; v was replaced by the first basis vector.
  bool degenerate = false;
};

template <typename Real>
Projection<Real> project_features(const BasicProjectionHead<Real>& head, const BasicTensor<Real>& decoder_features);

struct ContrastiveEmbedding {
  std::vector<float> v;  // unit norm
  bool degenerate = false;
};

ContrastiveEmbedding project(const NetParams& net, const ProjectionHead& head, const Tensor& image);

template <typename Real>
struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> per_anchor;
  std::vector<std::vector<Real>> d_embeddings;  // dLoss/dv_i
};

/// Mean over all 2B anchors of
///   -log( exp(v_i.v_p(i)/tau) / sum_{j != i} exp(v_i.v_j/tau) )
/// with p(2k) = 2k+1 and p(2k+1) = 2k. Embeddings must be unit norm.
template <typename Real>
InfoNceResult<Real> info_nce(const std::vector<std::vector<Real>>& embeddings, double temperature);

double info_nce_loss(const std::vector<std::vector<float>>& embeddings, double temperature);

/// Same loss from a precomputed similarity matrix (row-major N x N).
double info_nce_from_similarities(std::span<const double> similarities, std::size_t n, double temperature);

template <typename Real>
struct ContrastiveGradients {
  double loss = 0.0;
  std::vector<double> per_anchor;
  BasicNetParams<Real> net;  // head groups stay zero
  BasicProjectionHead<Real> head;
};

/// Loss and exact gradients for a batch of views paired as (2k, 2k+1).
template <typename Real>
ContrastiveGradients<Real> info_nce_backward(const std::vector<BasicTensor<Real>>& views,
                                             const BasicNetParams<Real>& net, const BasicProjectionHead<Real>& head,
                                             double temperature, int threads = 1);

struct PretrainResult {
  NetParams params;  // segmentation head is the untrained init; not meant for use
  std::vector<double> loss_history;  // mean batch loss per epoch
};

/// Pretrains on the dataset's training split. Network init is
/// `init_params(net_config, config.seed)`; the projection head is discarded.
PretrainResult pretrain(const Dataset& dataset, const NetConfig& net_config, const PretrainConfig& config,
                        int threads = 1);

/// Copies encoder and decoder layers from `pretrained` and draws a fresh
/// segmentation head from `seed`. Only the class count may differ.
NetParams transfer(const NetParams& pretrained, const NetConfig& target, std::uint64_t seed);

}  // namespace alseg

#endif  // ALSEG_CONTRASTIVE_HPP
