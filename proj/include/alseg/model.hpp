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

#ifndef ALSEG_MODEL_HPP
#define ALSEG_MODEL_HPP

// Encoder-decoder segmentation network with hand-written backpropagation.
//
//   image (H x W x 1)
//     -> conv3x3 + ReLU                  a1   (H x W x enc1)
//     -> maxpool 2x2                     p1   (H/2 x W/2 x enc1)
//     -> conv3x3 + ReLU                  a2   (H/2 x W/2 x enc2)
//     -> nearest upsample x2, concat a1  cat  (H x W x enc2 [+ enc1])
//     -> conv3x3 + ReLU                  decoder features (H x W x F)
//     -> conv1x1                         logits (H x W x C)
//     -> per-pixel softmax               probs
//
// All maps are channel-last. Conv weights are stored kernel-row, kernel-col,
// input channel, output channel; the 1x1 head is F x C.
//
// Everything numeric is templated on the scalar so the same code runs in
// float (training) and double (finite-difference shadow checks).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alseg/core.hpp"
#include "alseg/datagen.hpp"

namespace alseg {

struct NetConfig {
  std::uint32_t in_channels = 1;
  std::uint32_t enc1_channels = 8;
  std::uint32_t enc2_channels = 16;
  std::uint32_t dec_channels = 8;
  std::uint32_t n_classes = 5;
  bool skip_connection = true;

  std::uint32_t dec_in_channels() const { return enc2_channels + (skip_connection ? enc1_channels : 0); }
  void validate() const;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

template <typename Real>
struct BasicNetParams {
  NetConfig config;
  BasicTensor<Real> enc1_w, enc1_b;
  BasicTensor<Real> enc2_w, enc2_b;
  BasicTensor<Real> dec_w, dec_b;
  BasicTensor<Real> head_w, head_b;

  /// Correctly shaped, all zeros.
  static BasicNetParams zeros(const NetConfig& config);

  /// Parameter groups in checkpoint order.
  std::vector<BasicTensor<Real>*> groups();
  std::vector<const BasicTensor<Real>*> groups() const;
  static const std::vector<std::string>& group_names();

  std::size_t parameter_count() const;

  template <typename Other>
  BasicNetParams<Other> cast() const {
    BasicNetParams<Other> out;
    out.config = config;
    out.enc1_w = enc1_w.template cast<Other>();
    out.enc1_b = enc1_b.template cast<Other>();
    out.enc2_w = enc2_w.template cast<Other>();
    out.enc2_b = enc2_b.template cast<Other>();
    out.dec_w = dec_w.template cast<Other>();
    out.dec_b = dec_b.template cast<Other>();
    out.head_w = head_w.template cast<Other>();
    out.head_b = head_b.template cast<Other>();
    return out;
  }

  friend bool operator==(const BasicNetParams&, const BasicNetParams&) = default;
};

using NetParams = BasicNetParams<float>;

/// Convolutions He-normal (std = sqrt(2 / fan_in)), biases zero. The conv
/// layers draw from `seed ^ purpose::kNetInit`, the head from
/// `seed ^ purpose::kHeadInit`.
NetParams init_params(const NetConfig& config, std::uint64_t seed);
/// Just the segmentation head of `init_params(config, seed)`.
void init_head(NetParams& params, std::uint64_t seed);

/// Output of a forward pass; also the cache consumed by `backward`.
template <typename Real>
struct ForwardPass {
  std::size_t height = 0, width = 0;
  BasicTensor<Real> input;             // H x W x in
  BasicTensor<Real> a1;                // H x W x enc1, post-ReLU
  std::vector<std::uint32_t> pool_arg; // flat a1 index chosen by each pooled element
  BasicTensor<Real> p1;                // H/2 x W/2 x enc1
  BasicTensor<Real> a2;                // H/2 x W/2 x enc2, post-ReLU
  BasicTensor<Real> cat;               // H x W x dec_in
  BasicTensor<Real> decoder_features;  // H x W x F, post-ReLU
  BasicTensor<Real> logits;            // H x W x C
  BasicTensor<Real> probs;             // H x W x C, rows sum to 1
  NetConfig config;
  BasicNetParams<Real> params;         // weights the pass was computed with
};

template <typename Real>
ForwardPass<Real> forward(const BasicNetParams<Real>& params, const BasicTensor<Real>& image);

inline constexpr double kLogClamp = 1e-12;

/// sum_x w[y(x)] * -log p(y(x)|x) / sum_x w[y(x)], with p clamped at 1e-12.
template <typename Real>
double weighted_cross_entropy(const BasicTensor<Real>& probs, const Mask& mask, std::span<const double> weights);

/// Inverse labelled-set class frequency (floored at 1e-6), rescaled to mean 1.
std::vector<double> class_weights(const Dataset& dataset, const std::vector<std::size_t>& labelled);
std::vector<double> class_weights_from_frequencies(const ClassDistribution& freq);

inline constexpr double kFrequencyFloor = 1e-6;

/// sum_x w[y(x)]
double mask_weight_sum(const Mask& mask, std::span<const double> weights);

/// Gradient of `weighted_cross_entropy` for one image.
template <typename Real>
BasicNetParams<Real> backward(const ForwardPass<Real>& pass, const Mask& mask, std::span<const double> weights);

/// Accumulates `scale * d(sum_x w[y] * nll(x))/d(params)` into `grads`. A batch
/// gradient uses scale = 1 / (total weight over the batch). Returns the
/// unscaled weighted NLL sum.
template <typename Real>
double accumulate_ce_gradient(const ForwardPass<Real>& pass, const Mask& mask, std::span<const double> weights,
                              double scale, BasicNetParams<Real>& grads);

/// Backpropagates a gradient on the decoder features (H x W x F) into the
/// encoder/decoder groups of `grads`. Head groups are untouched.
template <typename Real>
void backward_from_features(const ForwardPass<Real>& pass, const BasicTensor<Real>& d_features,
                            BasicNetParams<Real>& grads);

template <typename Real>
void add_scaled(BasicNetParams<Real>& acc, const BasicNetParams<Real>& g, Real scale = Real(1));

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct RmspropHyper {
  double learning_rate = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-8;
  double weight_decay = 1e-8;
};

/// s <- decay*s + (1-decay)*g^2;  p <- p - lr*g/(sqrt(s)+eps) - lr*wd*p
void rmsprop_update(std::span<float> params, std::span<const float> grads, std::span<float> mean_square,
                    const RmspropHyper& hyper);

struct RmspropState {
  NetParams mean_square;
  static RmspropState for_params(const NetParams& p) { return {NetParams::zeros(p.config)}; }
};

void rmsprop_step(NetParams& params, const NetParams& grads, RmspropState& state, const RmspropHyper& hyper);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 16;
  double learning_rate = 1e-3;
  /// Epoch at which the rate is multiplied by `lr_drop_factor`; a negative
  /// value means epochs / 2.
  std::int32_t lr_drop_epoch = -1;
  double lr_drop_factor = 0.1;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double weight_decay = 1e-8;
  double hflip_probability = 0.5;
  double vflip_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate_at(std::uint32_t epoch) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  NetParams params;
  std::vector<double> loss_history;  // mean batch loss per epoch
};

/// Deterministic for (init, labelled, config); `threads` only changes speed.
TrainResult train(const NetParams& init, const Dataset& dataset, const std::vector<std::size_t>& labelled,
                  const TrainConfig& config, int threads = 1);

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// H x W x C class posteriors.
Tensor predict(const NetParams& params, const Tensor& image);
/// Global average pool of the decoder features (length F).
std::vector<float> image_embedding(const NetParams& params, const Tensor& image);
Mask predict_labels(const NetParams& params, const Tensor& image);

template <typename Real>
BasicTensor<Real> flip_horizontal(const BasicTensor<Real>& map);
template <typename Real>
BasicTensor<Real> flip_vertical(const BasicTensor<Real>& map);
Mask flip_horizontal(const Mask& mask, std::size_t height, std::size_t width);
Mask flip_vertical(const Mask& mask, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Checkpoints (params.bin)
// ---------------------------------------------------------------------------

enum class CheckpointKind : std::uint32_t {
  kFullSegmentation = 0,
  kPretrainedEncoderDecoder = 1,
};

/// Layout: "ALNP1", then little-endian u32 kind, in_channels, enc1, enc2,
/// dec, n_classes, skip; then float32 groups enc1_w, enc1_b, enc2_w, enc2_b,
/// dec_w, dec_b and, for full checkpoints only, head_w, head_b.
std::vector<std::uint8_t> encode_checkpoint(const NetParams& params, CheckpointKind kind);
struct Checkpoint {
  NetParams params;  // head zero-filled for pretrained checkpoints
  CheckpointKind kind;
};
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const NetParams& params, CheckpointKind kind, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace alseg

#endif  // ALSEG_MODEL_HPP
