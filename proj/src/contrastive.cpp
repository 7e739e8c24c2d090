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

#include "alseg/contrastive.hpp"

#include <cmath>
#include <numbers>

namespace alseg {

template <typename Real>
BasicProjectionHead<Real> BasicProjectionHead<Real>::zeros(std::size_t features, std::size_t hidden,
                                                           std::size_t proj_dim) {
  if (features < 1 || hidden < 1 || proj_dim < 2) {
    throw ArgumentError("projection head needs features >= 1, hidden >= 1 and output dimension >= 2");
  }
  return {BasicTensor<Real>({features, hidden}), BasicTensor<Real>({hidden}), BasicTensor<Real>({hidden, proj_dim}),
          BasicTensor<Real>({proj_dim})};
}

template struct BasicProjectionHead<float>;
template struct BasicProjectionHead<double>;

ProjectionHead init_projection_head(std::size_t features, std::size_t hidden, std::size_t proj_dim,
                                    std::uint64_t seed) {
  ProjectionHead head = ProjectionHead::zeros(features, hidden, proj_dim);
  Rng rng = Rng::for_purpose(seed, purpose::kProjInit);
  const double s1 = std::sqrt(2.0 / static_cast<double>(features));
  for (float& v : head.w1.values()) v = static_cast<float>(s1 * rng.normal());
  const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
  for (float& v : head.w2.values()) v = static_cast<float>(s2 * rng.normal());
  return head;
}

void AugmentConfig::validate() const {
  if (!(crop_min_area > 0.0 && crop_min_area <= crop_max_area && crop_max_area <= 1.0)) {
    throw ArgumentError("augment crop area range must satisfy 0 < min <= max <= 1");
  }
  for (double p : {hflip_probability, vflip_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("flip probabilities must lie in [0, 1]");
  }
  if (!(brightness >= 0.0 && brightness < 1.0)) throw ArgumentError("brightness jitter must lie in [0, 1)");
}

void PretrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ArgumentError("pretrain.temperature must be positive");
  if (batch_size < 2) throw ArgumentError("pretrain.batch_size must be >= 2 so every anchor has a negative");
  if (!(learning_rate > 0.0)) throw ArgumentError("pretrain.learning_rate must be positive");
  if (hidden_dim < 1 || proj_dim < 2) throw ArgumentError("pretrain head dimensions too small");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) throw ArgumentError("pretrain.rmsprop_decay must lie in [0, 1)");
  augment.validate();
}

double PretrainConfig::learning_rate_at(std::uint32_t epoch) const {
  if (epochs == 0) return learning_rate;
  return learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(epochs)));
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

Tensor augment_view(const Tensor& image, Rng& rng, const AugmentConfig& config) {
  if (image.rank() != 3) throw ArgumentError("augment expects an H x W x C image");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out = image;
  if (config.crop) {
    const double area = rng.uniform(config.crop_min_area, config.crop_max_area) * static_cast<double>(h * w);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_ratio);
    const auto cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::sqrt(area * ratio))), 1, w);
    const auto ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::sqrt(area / ratio))), 1, h);
    const std::size_t y0 = rng.below(h - ch + 1);
    const std::size_t x0 = rng.below(w - cw + 1);
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = y0 + (y * ch) / h;
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = x0 + (x * cw) / w;
        for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = image[(sy * w + sx) * c + k];
      }
    }
  }
  if (rng.bernoulli(config.hflip_probability)) out = flip_horizontal(out);
  if (rng.bernoulli(config.vflip_probability)) out = flip_vertical(out);
  if (config.brightness > 0.0) {
    const float factor = static_cast<float>(rng.uniform(1.0 - config.brightness, 1.0 + config.brightness));
    for (float& v : out.values()) v *= factor;
  }
  for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, Rng& rng, const AugmentConfig& config) {
  Tensor first = augment_view(image, rng, config);
  Tensor second = augment_view(image, rng, config);
  return {std::move(first), std::move(second)};
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

template <typename Real>
Projection<Real> project_features(const BasicProjectionHead<Real>& head, const BasicTensor<Real>& features) {
  if (features.rank() != 3 || features.dim(2) != head.features()) {
    throw ArgumentError("decoder features do not match the projection head input size");
  }
  const std::size_t positions = features.dim(0) * features.dim(1);
  const std::size_t nf = head.features(), nh = head.hidden(), np = head.proj_dim();
  Projection<Real> pr;
  std::vector<double> acc(nf, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t f = 0; f < nf; ++f) acc[f] += features[p * nf + f];
  }
  pr.pooled.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) pr.pooled[f] = static_cast<Real>(acc[f] / static_cast<double>(positions));

  pr.hidden_pre.assign(head.b1.values().begin(), head.b1.values().end());
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t m = 0; m < nh; ++m) pr.hidden_pre[m] += pr.pooled[f] * head.w1[f * nh + m];
  }
  pr.hidden.resize(nh);
  for (std::size_t m = 0; m < nh; ++m) pr.hidden[m] = pr.hidden_pre[m] > Real(0) ? pr.hidden_pre[m] : Real(0);

  pr.z.assign(head.b2.values().begin(), head.b2.values().end());
  for (std::size_t m = 0; m < nh; ++m) {
    for (std::size_t k = 0; k < np; ++k) pr.z[k] += pr.hidden[m] * head.w2[m * np + k];
  }
  double sq = 0.0;
  for (Real v : pr.z) sq += static_cast<double>(v) * static_cast<double>(v);
  pr.norm = static_cast<Real>(std::sqrt(sq));
  pr.v.assign(np, Real(0));
  if (sq == 0.0) {
    pr.degenerate = true;
    pr.v[0] = Real(1);
  } else {
    for (std::size_t k = 0; k < np; ++k) pr.v[k] = static_cast<Real>(pr.z[k] / std::sqrt(sq));
  }
  return pr;
}

template Projection<float> project_features(const BasicProjectionHead<float>&, const BasicTensor<float>&);
template Projection<double> project_features(const BasicProjectionHead<double>&, const BasicTensor<double>&);

ContrastiveEmbedding project(const NetParams& net, const ProjectionHead& head, const Tensor& image) {
  const Projection<float> pr = project_features(head, forward(net, image).decoder_features);
  return {pr.v, pr.degenerate};
}

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

namespace {

struct NceCore {
  double loss = 0.0;
  std::vector<double> per_anchor;
  std::vector<double> d_sim;  // dLoss/dS_ij, N x N
};

NceCore info_nce_core(std::span<const double> sim, std::size_t n, double tau) {
  if (n < 4 || n % 2 != 0) throw ArgumentError("info_nce needs an even number (>= 4) of embeddings");
  if (!(tau > 0.0)) throw ArgumentError("temperature must be positive");
  NceCore out;
  out.per_anchor.resize(n);
  out.d_sim.assign(n * n, 0.0);
  std::vector<double> prob(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i ^ 1u;
    double peak = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) peak = std::max(peak, sim[i * n + j] / tau);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      prob[j] = std::exp(sim[i * n + j] / tau - peak);
      denom += prob[j];
    }
    const double lse = peak + std::log(denom);
    out.per_anchor[i] = lse - sim[i * n + pos] / tau;
    out.loss += out.per_anchor[i];
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double p = prob[j] / denom;
      out.d_sim[i * n + j] = (p - (j == pos ? 1.0 : 0.0)) / (tau * static_cast<double>(n));
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

}  // namespace

double info_nce_from_similarities(std::span<const double> similarities, std::size_t n, double temperature) {
  if (similarities.size() != n * n) throw ArgumentError("similarity matrix must be N x N");
  return info_nce_core(similarities, n, temperature).loss;
}

template <typename Real>
InfoNceResult<Real> info_nce(const std::vector<std::vector<Real>>& emb, double temperature) {
  const std::size_t n = emb.size();
  if (n < 4 || n % 2 != 0) throw ArgumentError("info_nce needs an even number (>= 4) of embeddings");
  const std::size_t d = emb[0].size();
  constexpr double kUnitTolerance = 1e-4;
  for (const auto& v : emb) {
    if (v.size() != d) throw ArgumentError("embeddings differ in length");
    double sq = 0.0;
    for (Real x : v) sq += static_cast<double>(x) * static_cast<double>(x);
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) throw ArgumentError("info_nce embeddings must be unit norm");
  }
  std::vector<double> sim(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(emb[i][k]) * static_cast<double>(emb[j][k]);
      sim[i * n + j] = s;
    }
  }
  NceCore core = info_nce_core(sim, n, temperature);
  InfoNceResult<Real> out;
  out.loss = core.loss;
  out.per_anchor = std::move(core.per_anchor);
  out.d_embeddings.assign(n, std::vector<Real>(d, Real(0)));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> g(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double coef = core.d_sim[i * n + j] + core.d_sim[j * n + i];
      for (std::size_t k = 0; k < d; ++k) g[k] += coef * static_cast<double>(emb[j][k]);
    }
    for (std::size_t k = 0; k < d; ++k) out.d_embeddings[i][k] = static_cast<Real>(g[k]);
  }
  return out;
}

template InfoNceResult<float> info_nce(const std::vector<std::vector<float>>&, double);
template InfoNceResult<double> info_nce(const std::vector<std::vector<double>>&, double);

double info_nce_loss(const std::vector<std::vector<float>>& embeddings, double temperature) {
  return info_nce(embeddings, temperature).loss;
}

template <typename Real>
ContrastiveGradients<Real> info_nce_backward(const std::vector<BasicTensor<Real>>& views,
                                             const BasicNetParams<Real>& net, const BasicProjectionHead<Real>& head,
                                             double temperature, int threads) {
  const std::size_t n = views.size();
  if (head.features() != net.config.dec_channels) {
    throw ArgumentError("projection head input size does not match decoder channels");
  }
  std::vector<ForwardPass<Real>> passes(n);
  std::vector<Projection<Real>> projections(n);
  parallel_for(n, threads, [&](std::size_t i) {
    passes[i] = forward(net, views[i]);
    projections[i] = project_features(head, passes[i].decoder_features);
  });
  std::vector<std::vector<Real>> emb(n);
  for (std::size_t i = 0; i < n; ++i) emb[i] = projections[i].v;
  const InfoNceResult<Real> nce = info_nce(emb, temperature);

  const std::size_t nf = head.features(), nh = head.hidden(), np = head.proj_dim();
  std::vector<BasicNetParams<Real>> net_grads(n);
  std::vector<BasicProjectionHead<Real>> head_grads(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const Projection<Real>& pr = projections[i];
    const ForwardPass<Real>& fp = passes[i];
    BasicProjectionHead<Real> hg = BasicProjectionHead<Real>::zeros(nf, nh, np);
    net_grads[i] = BasicNetParams<Real>::zeros(net.config);
    if (pr.degenerate) {
      head_grads[i] = std::move(hg);
      return;
    }
    const std::vector<Real>& dv = nce.d_embeddings[i];
    double v_dot_dv = 0.0;
    for (std::size_t k = 0; k < np; ++k) v_dot_dv += static_cast<double>(pr.v[k]) * static_cast<double>(dv[k]);
    std::vector<Real> dz(np);
    for (std::size_t k = 0; k < np; ++k) {
      dz[k] = static_cast<Real>((static_cast<double>(dv[k]) - static_cast<double>(pr.v[k]) * v_dot_dv) /
                                static_cast<double>(pr.norm));
    }
    std::vector<Real> dh(nh, Real(0));
    for (std::size_t m = 0; m < nh; ++m) {
      for (std::size_t k = 0; k < np; ++k) {
        hg.w2[m * np + k] += pr.hidden[m] * dz[k];
        dh[m] += head.w2[m * np + k] * dz[k];
      }
    }
    for (std::size_t k = 0; k < np; ++k) hg.b2[k] += dz[k];
    for (std::size_t m = 0; m < nh; ++m) {
      if (!(pr.hidden_pre[m] > Real(0))) dh[m] = Real(0);
    }
    std::vector<Real> dpool(nf, Real(0));
    for (std::size_t f = 0; f < nf; ++f) {
      for (std::size_t m = 0; m < nh; ++m) {
        hg.w1[f * nh + m] += pr.pooled[f] * dh[m];
        dpool[f] += head.w1[f * nh + m] * dh[m];
      }
    }
    for (std::size_t m = 0; m < nh; ++m) hg.b1[m] += dh[m];

    const std::size_t positions = fp.height * fp.width;
    BasicTensor<Real> d_features({fp.height, fp.width, nf});
    const Real inv = Real(1) / static_cast<Real>(positions);
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t f = 0; f < nf; ++f) d_features[p * nf + f] = dpool[f] * inv;
    }
    backward_from_features(fp, d_features, net_grads[i]);
    head_grads[i] = std::move(hg);
  });

  ContrastiveGradients<Real> out;
  out.loss = nce.loss;
  out.per_anchor = nce.per_anchor;
  out.net = BasicNetParams<Real>::zeros(net.config);
  out.head = BasicProjectionHead<Real>::zeros(nf, nh, np);
  for (std::size_t i = 0; i < n; ++i) {
    add_scaled(out.net, net_grads[i]);
    auto dst = out.head.groups();
    auto src = head_grads[i].groups();
    for (std::size_t g = 0; g < dst.size(); ++g) {
      for (std::size_t k = 0; k < dst[g]->size(); ++k) (*dst[g])[k] += (*src[g])[k];
    }
  }
  return out;
}

template ContrastiveGradients<float> info_nce_backward(const std::vector<BasicTensor<float>>&,
                                                       const BasicNetParams<float>&, const BasicProjectionHead<float>&,
                                                       double, int);
template ContrastiveGradients<double> info_nce_backward(const std::vector<BasicTensor<double>>&,
                                                        const BasicNetParams<double>&,
                                                        const BasicProjectionHead<double>&, double, int);

// ---------------------------------------------------------------------------
// Pretraining and transfer
// ---------------------------------------------------------------------------

PretrainResult pretrain(const Dataset& dataset, const NetConfig& net_config, const PretrainConfig& config,
                        int threads) {
  config.validate();
  net_config.validate();
  const std::vector<std::size_t>& pool = dataset.train_indices;
  if (pool.size() < config.batch_size) throw ArgumentError("training split is smaller than the pretrain batch size");

  PretrainResult result{init_params(net_config, config.seed), {}};
  NetParams& net = result.params;
  ProjectionHead head = init_projection_head(net_config.dec_channels, config.hidden_dim, config.proj_dim, config.seed);
  RmspropState net_state = RmspropState::for_params(net);
  ProjectionHead head_state = ProjectionHead::zeros(head.features(), head.hidden(), head.proj_dim());

  Rng shuffle_rng = Rng::for_purpose(config.seed, purpose::kTrainShuffle);
  Rng augment_rng = Rng::for_purpose(config.seed, purpose::kAugment);
  std::vector<std::size_t> order = pool;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    const RmspropHyper hyper{config.learning_rate_at(epoch), config.rmsprop_decay, config.rmsprop_epsilon,
                             config.weight_decay};
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
      // A lone trailing image has no negative.
      if (count < 2) break;
      std::vector<Tensor> views;
      views.reserve(2 * count);
      for (std::size_t b = 0; b < count; ++b) {
        auto [first, second] = augment_pair(dataset.images[order[start + b]], augment_rng, config.augment);
        views.push_back(std::move(first));
        views.push_back(std::move(second));
      }
      const ContrastiveGradients<float> g = info_nce_backward(views, net, head, config.temperature, threads);
      rmsprop_step(net, g.net, net_state, hyper);
      auto hp = head.groups();
      auto hg = g.head.groups();
      auto hs = head_state.groups();
      for (std::size_t k = 0; k < hp.size(); ++k) rmsprop_update(hp[k]->values(), hg[k]->values(), hs[k]->values(), hyper);
      epoch_loss += g.loss;
      ++n_batches;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(n_batches, 1)));
  }
  return result;
}

namespace {
constexpr std::uint64_t kTransferHeadTag = 0x5452414e53464552ULL;  // "TRANSFER"
}

NetParams transfer(const NetParams& pretrained, const NetConfig& target, std::uint64_t seed) {
  NetConfig body = pretrained.config;
  body.n_classes = target.n_classes;
  if (body != target) throw ArgumentError("pretrained network configuration does not match the target");
  NetParams out = NetParams::zeros(target);
  out.enc1_w = pretrained.enc1_w;
  out.enc1_b = pretrained.enc1_b;
  out.enc2_w = pretrained.enc2_w;
  out.enc2_b = pretrained.enc2_b;
  out.dec_w = pretrained.dec_w;
  out.dec_b = pretrained.dec_b;
  init_head(out, seed ^ kTransferHeadTag);
  return out;
}

}  // namespace alseg
