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

#include "alseg/model.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <type_traits>

#include "alseg/binary_io.hpp"

namespace alseg {

void NetConfig::validate() const {
  if (in_channels < 1 || enc1_channels < 1 || enc2_channels < 1 || dec_channels < 1 || n_classes < 1) {
    throw ArgumentError("all network channel counts must be >= 1");
  }
}

template <typename Real>
BasicNetParams<Real> BasicNetParams<Real>::zeros(const NetConfig& c) {
  c.validate();
  BasicNetParams p;
  p.config = c;
  p.enc1_w = BasicTensor<Real>({3, 3, c.in_channels, c.enc1_channels});
  p.enc1_b = BasicTensor<Real>({c.enc1_channels});
  p.enc2_w = BasicTensor<Real>({3, 3, c.enc1_channels, c.enc2_channels});
  p.enc2_b = BasicTensor<Real>({c.enc2_channels});
  p.dec_w = BasicTensor<Real>({3, 3, c.dec_in_channels(), c.dec_channels});
  p.dec_b = BasicTensor<Real>({c.dec_channels});
  p.head_w = BasicTensor<Real>({c.dec_channels, c.n_classes});
  p.head_b = BasicTensor<Real>({c.n_classes});
  return p;
}

template <typename Real>
std::vector<BasicTensor<Real>*> BasicNetParams<Real>::groups() {
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec_w, &dec_b, &head_w, &head_b};
}

template <typename Real>
std::vector<const BasicTensor<Real>*> BasicNetParams<Real>::groups() const {
  return {&enc1_w, &enc1_b, &enc2_w, &enc2_b, &dec_w, &dec_b, &head_w, &head_b};
}

template <typename Real>
const std::vector<std::string>& BasicNetParams<Real>::group_names() {
  static const std::vector<std::string> names{"enc1_w", "enc1_b", "enc2_w", "enc2_b",
                                              "dec_w",  "dec_b",  "head_w", "head_b"};
  return names;
}

template <typename Real>
std::size_t BasicNetParams<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* g : groups()) n += g->size();
  return n;
}

template struct BasicNetParams<float>;
template struct BasicNetParams<double>;

namespace {

void he_fill(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (float& v : t.values()) v = static_cast<float>(stddev * rng.normal());
}

}  // namespace

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
  NetParams p = NetParams::zeros(config);
  Rng rng = Rng::for_purpose(seed, purpose::kNetInit);
  he_fill(p.enc1_w, 9u * config.in_channels, rng);
  he_fill(p.enc2_w, 9u * config.enc1_channels, rng);
  he_fill(p.dec_w, 9u * config.dec_in_channels(), rng);
  init_head(p, seed);
  return p;
}

void init_head(NetParams& params, std::uint64_t seed) {
  Rng rng = Rng::for_purpose(seed, purpose::kHeadInit);
  he_fill(params.head_w, params.config.dec_channels, rng);
  params.head_b.fill(0.0f);
}

// ---------------------------------------------------------------------------
// Kernels (channel-last maps)
// ---------------------------------------------------------------------------

namespace {

// Calls fn with the channel count as a compile-time constant for the sizes
// the default network uses, so the inner loops unroll and vectorise.
template <typename Fn>
void with_static_size(std::size_t n, Fn&& fn) {
  switch (n) {
    case 5: return fn(std::integral_constant<std::size_t, 5>{});
    case 8: return fn(std::integral_constant<std::size_t, 8>{});
    case 16: return fn(std::integral_constant<std::size_t, 16>{});
    default: return fn(n);
  }
}

template <typename Real, typename Size>
void conv3x3_forward_k(const Real* __restrict in, std::size_t h, std::size_t w, std::size_t cin,
                       const Real* __restrict weight, const Real* __restrict bias, Size cout, Real* __restrict out) {
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Real* __restrict o = out + (y * w + x) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if (y + ky < 1 || y + ky > h) continue;
        const std::size_t iy = y + ky - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if (x + kx < 1 || x + kx > w) continue;
          const std::size_t ix = x + kx - 1;
          const Real* ip = in + (iy * w + ix) * cin;
          const Real* wp = weight + (ky * 3 + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const Real v = ip[ci];
            const Real* wr = wp + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * wr[co];
          }
        }
      }
    }
  }
}

// float specialisation for cout = 4 * L: the accumulators live in L SIMD
// registers. Each lane performs the same operations in the same order as the
// scalar loop, so results are identical.
typedef float Float4 __attribute__((vector_size(16)));

template <std::size_t L>
void conv3x3_forward_simd(const float* __restrict in, std::size_t h, std::size_t w, std::size_t cin,
                          const float* __restrict weight, const float* __restrict bias, float* __restrict out) {
  constexpr std::size_t cout = 4 * L;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Float4 acc[L];
      for (std::size_t l = 0; l < L; ++l) std::memcpy(&acc[l], bias + 4 * l, sizeof(Float4));
      for (std::size_t ky = 0; ky < 3; ++ky) {
        if (y + ky < 1 || y + ky > h) continue;
        const std::size_t iy = y + ky - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          if (x + kx < 1 || x + kx > w) continue;
          const std::size_t ix = x + kx - 1;
          const float* ip = in + (iy * w + ix) * cin;
          const float* wp = weight + (ky * 3 + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const float v = ip[ci];
            const Float4 vv = {v, v, v, v};
            for (std::size_t l = 0; l < L; ++l) {
              Float4 wv;
              std::memcpy(&wv, wp + ci * cout + 4 * l, sizeof(Float4));
              acc[l] += vv * wv;
            }
          }
        }
      }
      std::memcpy(out + (y * w + x) * cout, acc, sizeof(acc));
    }
  }
}

template <typename Real>
void conv3x3_forward(const Real* in, std::size_t h, std::size_t w, std::size_t cin, const Real* weight,
                     const Real* bias, std::size_t cout, Real* out) {
  if constexpr (std::is_same_v<Real, float>) {
    if (cout == 8) return conv3x3_forward_simd<2>(in, h, w, cin, weight, bias, out);
    if (cout == 16) return conv3x3_forward_simd<4>(in, h, w, cin, weight, bias, out);
    if (cout == 24) return conv3x3_forward_simd<6>(in, h, w, cin, weight, bias, out);
  }
  with_static_size(cout, [&](auto n) { conv3x3_forward_k(in, h, w, cin, weight, bias, n, out); });
}

// d_weight[k][ci][:] += sum over pixels of in(shifted by k)[ci] * d_out[:].
// One weight row is accumulated across the whole image before it is stored.
template <typename Real>
void conv3x3_weight_grad(const Real* __restrict in, std::size_t h, std::size_t w, std::size_t cin,
                         std::size_t cout, const Real* __restrict d_out, Real* __restrict d_weight) {
  std::vector<Real> acc(cout);
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      for (std::size_t ci = 0; ci < cin; ++ci) {
        Real* dwr = d_weight + ((ky * 3 + kx) * cin + ci) * cout;
        std::copy(dwr, dwr + cout, acc.begin());
        for (std::size_t y = 0; y < h; ++y) {
          if (y + ky < 1 || y + ky > h) continue;
          const std::size_t iy = y + ky - 1;
          for (std::size_t x = 0; x < w; ++x) {
            if (x + kx < 1 || x + kx > w) continue;
            const Real v = in[(iy * w + x + kx - 1) * cin + ci];
            const Real* g = d_out + (y * w + x) * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += v * g[co];
          }
        }
        std::copy(acc.begin(), acc.end(), dwr);
      }
    }
  }
}

template <std::size_t L>
void conv3x3_weight_grad_simd(const float* __restrict in, std::size_t h, std::size_t w, std::size_t cin,
                              const float* __restrict d_out, float* __restrict d_weight) {
  constexpr std::size_t cout = 4 * L;
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
      const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        float* dwr = d_weight + ((ky * 3 + kx) * cin + ci) * cout;
        Float4 acc[L];
        std::memcpy(acc, dwr, sizeof(acc));
        for (std::size_t y = y0; y < y1; ++y) {
          const float* ip = in + ((y + ky - 1) * w + kx - 1) * cin + ci;
          const float* g = d_out + y * w * cout;
          for (std::size_t x = x0; x < x1; ++x) {
            const float v = ip[x * cin];
            const Float4 vv = {v, v, v, v};
            for (std::size_t l = 0; l < L; ++l) {
              Float4 gv;
              std::memcpy(&gv, g + x * cout + 4 * l, sizeof(Float4));
              acc[l] += vv * gv;
            }
          }
        }
        std::memcpy(dwr, acc, sizeof(acc));
      }
    }
  }
}

// Accumulates into d_weight, d_bias and (unless null) d_in.
template <typename Real>
void conv3x3_backward(const Real* in, std::size_t h, std::size_t w, std::size_t cin, const Real* weight,
                      std::size_t cout, const Real* d_out, Real* d_weight, Real* d_bias, Real* d_in) {
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t co = 0; co < cout; ++co) d_bias[co] += d_out[p * cout + co];
  }
  bool done = false;
  if constexpr (std::is_same_v<Real, float>) {
    if (cout == 8) conv3x3_weight_grad_simd<2>(in, h, w, cin, d_out, d_weight), done = true;
    if (cout == 16) conv3x3_weight_grad_simd<4>(in, h, w, cin, d_out, d_weight), done = true;
  }
  if (!done) conv3x3_weight_grad(in, h, w, cin, cout, d_out, d_weight);
  if (!d_in) return;

  // The input gradient is a same-padded conv of d_out with the kernel
  // rotated by 180 degrees and the channel axes swapped.
  std::vector<Real> rotated(9 * cin * cout);
  for (std::size_t k = 0; k < 9; ++k) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t co = 0; co < cout; ++co) {
        rotated[(k * cout + co) * cin + ci] = weight[((8 - k) * cin + ci) * cout + co];
      }
    }
  }
  const std::vector<Real> zero_bias(cin, Real(0));
  std::vector<Real> d_in_local(h * w * cin);
  conv3x3_forward(d_out, h, w, cout, rotated.data(), zero_bias.data(), cin, d_in_local.data());
  for (std::size_t i = 0; i < d_in_local.size(); ++i) d_in[i] += d_in_local[i];
}

template <typename Real>
void relu_inplace(BasicTensor<Real>& t) {
  for (Real& v : t.values()) v = v > Real(0) ? v : Real(0);
}

// d <- d * [activation > 0]
template <typename Real>
void relu_backward_inplace(BasicTensor<Real>& d, const BasicTensor<Real>& activation) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(activation[i] > Real(0))) d[i] = Real(0);
  }
}

template <typename Real>
void check_image(const NetConfig& config, const BasicTensor<Real>& image) {
  if (image.rank() != 3 || image.dim(2) != config.in_channels) {
    throw ArgumentError("network input must be H x W x " + std::to_string(config.in_channels));
  }
  if (image.dim(0) < 2 || image.dim(1) < 2 || image.dim(0) % 2 != 0 || image.dim(1) % 2 != 0) {
    throw ArgumentError("network input height and width must be positive and even");
  }
  if (!image.all_finite()) throw ArgumentError("network input contains non-finite values");
}

}  // namespace

template <typename Real>
ForwardPass<Real> forward(const BasicNetParams<Real>& params, const BasicTensor<Real>& image) {
  const NetConfig& c = params.config;
  check_image(c, image);
  const std::size_t h = image.dim(0), w = image.dim(1), h2 = h / 2, w2 = w / 2;
  const std::size_t e1 = c.enc1_channels, e2 = c.enc2_channels, din = c.dec_in_channels(), f = c.dec_channels,
                    nc = c.n_classes;

  ForwardPass<Real> fp;
  fp.config = c;
  fp.params = params;
  fp.height = h;
  fp.width = w;
  fp.input = image;

  fp.a1 = BasicTensor<Real>({h, w, e1});
  conv3x3_forward(image.data(), h, w, c.in_channels, params.enc1_w.data(), params.enc1_b.data(), e1, fp.a1.data());
  relu_inplace(fp.a1);

  fp.p1 = BasicTensor<Real>({h2, w2, e1});
  fp.pool_arg.assign(h2 * w2 * e1, 0);
  for (std::size_t y = 0; y < h2; ++y) {
    for (std::size_t x = 0; x < w2; ++x) {
      for (std::size_t ch = 0; ch < e1; ++ch) {
        const std::size_t cand[4] = {((2 * y) * w + 2 * x) * e1 + ch, ((2 * y) * w + 2 * x + 1) * e1 + ch,
                                     ((2 * y + 1) * w + 2 * x) * e1 + ch, ((2 * y + 1) * w + 2 * x + 1) * e1 + ch};
        std::size_t best = cand[0];
        for (int k = 1; k < 4; ++k) {
          if (fp.a1[cand[k]] > fp.a1[best]) best = cand[k];
        }
        const std::size_t o = (y * w2 + x) * e1 + ch;
        fp.p1[o] = fp.a1[best];
        fp.pool_arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }

  fp.a2 = BasicTensor<Real>({h2, w2, e2});
  conv3x3_forward(fp.p1.data(), h2, w2, e1, params.enc2_w.data(), params.enc2_b.data(), e2, fp.a2.data());
  relu_inplace(fp.a2);

  fp.cat = BasicTensor<Real>({h, w, din});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Real* o = fp.cat.data() + (y * w + x) * din;
      const Real* up = fp.a2.data() + ((y / 2) * w2 + x / 2) * e2;
      std::copy(up, up + e2, o);
      if (c.skip_connection) {
        const Real* skip = fp.a1.data() + (y * w + x) * e1;
        std::copy(skip, skip + e1, o + e2);
      }
    }
  }

  fp.decoder_features = BasicTensor<Real>({h, w, f});
  conv3x3_forward(fp.cat.data(), h, w, din, params.dec_w.data(), params.dec_b.data(), f,
                  fp.decoder_features.data());
  relu_inplace(fp.decoder_features);

  fp.logits = BasicTensor<Real>({h, w, nc});
  fp.probs = BasicTensor<Real>({h, w, nc});
  for (std::size_t p = 0; p < h * w; ++p) {
    const Real* d = fp.decoder_features.data() + p * f;
    Real* l = fp.logits.data() + p * nc;
    for (std::size_t k = 0; k < nc; ++k) l[k] = params.head_b[k];
    for (std::size_t j = 0; j < f; ++j) {
      const Real v = d[j];
      if (v == Real(0)) continue;
      const Real* wr = params.head_w.data() + j * nc;
      for (std::size_t k = 0; k < nc; ++k) l[k] += v * wr[k];
    }
    Real peak = l[0];
    for (std::size_t k = 1; k < nc; ++k) peak = std::max(peak, l[k]);
    Real* pr = fp.probs.data() + p * nc;
    Real sum = 0;
    for (std::size_t k = 0; k < nc; ++k) {
      pr[k] = std::exp(l[k] - peak);
      sum += pr[k];
    }
    for (std::size_t k = 0; k < nc; ++k) pr[k] /= sum;
  }
  return fp;
}

template ForwardPass<float> forward(const BasicNetParams<float>&, const BasicTensor<float>&);
template ForwardPass<double> forward(const BasicNetParams<double>&, const BasicTensor<double>&);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

template <typename Real>
void check_loss_inputs(const BasicTensor<Real>& probs, const Mask& mask, std::span<const double> weights) {
  if (probs.rank() != 3) throw ArgumentError("probability map must be H x W x C");
  const std::size_t nc = probs.dim(2);
  if (mask.size() != probs.dim(0) * probs.dim(1)) throw ArgumentError("mask size does not match probability map");
  if (weights.size() != nc) throw ArgumentError("class weight count does not match class count");
  for (double wt : weights) {
    if (!(wt > 0.0) || !std::isfinite(wt)) throw ArgumentError("class weights must be positive and finite");
  }
  for (std::uint8_t y : mask) {
    if (y >= nc) throw ArgumentError("mask class " + std::to_string(y) + " out of range");
  }
}

}  // namespace

double mask_weight_sum(const Mask& mask, std::span<const double> weights) {
  double s = 0.0;
  for (std::uint8_t y : mask) {
    if (y >= weights.size()) throw ArgumentError("mask class " + std::to_string(y) + " out of range");
    s += weights[y];
  }
  return s;
}

template <typename Real>
double weighted_cross_entropy(const BasicTensor<Real>& probs, const Mask& mask, std::span<const double> weights) {
  check_loss_inputs(probs, mask, weights);
  const std::size_t nc = probs.dim(2);
  double num = 0.0, den = 0.0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    const double pr = std::max(static_cast<double>(probs[p * nc + mask[p]]), kLogClamp);
    num += weights[mask[p]] * -std::log(pr);
    den += weights[mask[p]];
  }
  return num / den;
}

template double weighted_cross_entropy(const BasicTensor<float>&, const Mask&, std::span<const double>);
template double weighted_cross_entropy(const BasicTensor<double>&, const Mask&, std::span<const double>);

std::vector<double> class_weights_from_frequencies(const ClassDistribution& freq) {
  std::vector<double> raw(freq.size());
  for (std::size_t c = 0; c < raw.size(); ++c) raw[c] = 1.0 / std::max(freq[c], kFrequencyFloor);
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  for (double& v : raw) v /= mean;
  return raw;
}

std::vector<double> class_weights(const Dataset& dataset, const std::vector<std::size_t>& labelled) {
  return class_weights_from_frequencies(class_frequencies(dataset, labelled));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

template <typename Real>
void backward_from_features(const ForwardPass<Real>& fp, const BasicTensor<Real>& d_features,
                            BasicNetParams<Real>& grads) {
  const NetConfig& c = fp.config;
  if (grads.config != c) throw ArgumentError("gradient buffer does not match the forward pass network");
  const std::size_t h = fp.height, w = fp.width, h2 = h / 2, w2 = w / 2;
  const std::size_t e1 = c.enc1_channels, e2 = c.enc2_channels, din = c.dec_in_channels(), f = c.dec_channels;
  if (d_features.shape() != std::vector<std::size_t>{h, w, f}) {
    throw ArgumentError("decoder feature gradient shape does not match the forward pass");
  }
  const BasicNetParams<Real>& p = fp.params;

  BasicTensor<Real> d_dec = d_features;
  relu_backward_inplace(d_dec, fp.decoder_features);

  BasicTensor<Real> d_cat({h, w, din});
  conv3x3_backward(fp.cat.data(), h, w, din, p.dec_w.data(), f, d_dec.data(), grads.dec_w.data(),
                   grads.dec_b.data(), d_cat.data());

  // Split the concatenation: upsampled enc2 channels first, then the skip.
  BasicTensor<Real> d_a2({h2, w2, e2});
  BasicTensor<Real> d_a1({h, w, e1});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Real* g = d_cat.data() + (y * w + x) * din;
      Real* up = d_a2.data() + ((y / 2) * w2 + x / 2) * e2;
      for (std::size_t k = 0; k < e2; ++k) up[k] += g[k];
      if (c.skip_connection) {
        Real* sk = d_a1.data() + (y * w + x) * e1;
        for (std::size_t k = 0; k < e1; ++k) sk[k] += g[e2 + k];
      }
    }
  }
  relu_backward_inplace(d_a2, fp.a2);

  BasicTensor<Real> d_p1({h2, w2, e1});
  conv3x3_backward(fp.p1.data(), h2, w2, e1, p.enc2_w.data(), e2, d_a2.data(), grads.enc2_w.data(),
                   grads.enc2_b.data(), d_p1.data());
  for (std::size_t i = 0; i < d_p1.size(); ++i) d_a1[fp.pool_arg[i]] += d_p1[i];
  relu_backward_inplace(d_a1, fp.a1);

  conv3x3_backward(fp.input.data(), h, w, c.in_channels, p.enc1_w.data(), e1, d_a1.data(), grads.enc1_w.data(),
                   grads.enc1_b.data(), static_cast<Real*>(nullptr));
}

template void backward_from_features(const ForwardPass<float>&, const BasicTensor<float>&, BasicNetParams<float>&);
template void backward_from_features(const ForwardPass<double>&, const BasicTensor<double>&, BasicNetParams<double>&);

template <typename Real>
double accumulate_ce_gradient(const ForwardPass<Real>& fp, const Mask& mask, std::span<const double> weights,
                              double scale, BasicNetParams<Real>& grads) {
  check_loss_inputs(fp.probs, mask, weights);
  if (grads.config != fp.config) throw ArgumentError("gradient buffer does not match the forward pass network");
  const std::size_t hw = fp.height * fp.width;
  const std::size_t nc = fp.config.n_classes, f = fp.config.dec_channels;

  double nll_sum = 0.0;
  BasicTensor<Real> d_logits({fp.height, fp.width, nc});
  for (std::size_t p = 0; p < hw; ++p) {
    const std::uint8_t y = mask[p];
    const Real* pr = fp.probs.data() + p * nc;
    const double py = static_cast<double>(pr[y]);
    nll_sum += weights[y] * -std::log(std::max(py, kLogClamp));
    // Inside the clamp the loss is flat in the logits.
    if (py < kLogClamp) continue;
    const Real coef = static_cast<Real>(scale * weights[y]);
    Real* g = d_logits.data() + p * nc;
    for (std::size_t k = 0; k < nc; ++k) g[k] = coef * pr[k];
    g[y] -= coef;
  }

  BasicTensor<Real> d_features({fp.height, fp.width, f});
  const BasicTensor<Real>& head_w = fp.params.head_w;
  for (std::size_t p = 0; p < hw; ++p) {
    const Real* g = d_logits.data() + p * nc;
    const Real* d = fp.decoder_features.data() + p * f;
    Real* dd = d_features.data() + p * f;
    for (std::size_t k = 0; k < nc; ++k) grads.head_b[k] += g[k];
    for (std::size_t j = 0; j < f; ++j) {
      const Real* wr = head_w.data() + j * nc;
      Real* dwr = grads.head_w.data() + j * nc;
      Real s = 0;
      for (std::size_t k = 0; k < nc; ++k) {
        dwr[k] += d[j] * g[k];
        s += wr[k] * g[k];
      }
      dd[j] = s;
    }
  }
  backward_from_features(fp, d_features, grads);
  return nll_sum;
}

template double accumulate_ce_gradient(const ForwardPass<float>&, const Mask&, std::span<const double>, double,
                                       BasicNetParams<float>&);
template double accumulate_ce_gradient(const ForwardPass<double>&, const Mask&, std::span<const double>, double,
                                       BasicNetParams<double>&);

template <typename Real>
BasicNetParams<Real> backward(const ForwardPass<Real>& fp, const Mask& mask, std::span<const double> weights) {
  BasicNetParams<Real> grads = BasicNetParams<Real>::zeros(fp.config);
  const double total = mask_weight_sum(mask, weights);
  accumulate_ce_gradient(fp, mask, weights, 1.0 / total, grads);
  return grads;
}

template BasicNetParams<float> backward(const ForwardPass<float>&, const Mask&, std::span<const double>);
template BasicNetParams<double> backward(const ForwardPass<double>&, const Mask&, std::span<const double>);

template <typename Real>
void add_scaled(BasicNetParams<Real>& acc, const BasicNetParams<Real>& g, Real scale) {
  auto dst = acc.groups();
  auto src = g.groups();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->size() != src[i]->size()) throw ArgumentError("parameter group size mismatch");
    Real* d = dst[i]->data();
    const Real* s = src[i]->data();
    for (std::size_t k = 0; k < dst[i]->size(); ++k) d[k] += scale * s[k];
  }
}

template void add_scaled(BasicNetParams<float>&, const BasicNetParams<float>&, float);
template void add_scaled(BasicNetParams<double>&, const BasicNetParams<double>&, double);

// ---------------------------------------------------------------------------
// RMSprop
// ---------------------------------------------------------------------------

void rmsprop_update(std::span<float> params, std::span<const float> grads, std::span<float> mean_square,
                    const RmspropHyper& hyper) {
  if (params.size() != grads.size() || params.size() != mean_square.size()) {
    throw ArgumentError("rmsprop_update: mismatched buffer sizes");
  }
  const double lr = hyper.learning_rate, decay = hyper.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double s = decay * mean_square[i] + (1.0 - decay) * g * g;
    mean_square[i] = static_cast<float>(s);
    const double p = params[i];
    params[i] = static_cast<float>(p - lr * g / (std::sqrt(s) + hyper.epsilon) - lr * hyper.weight_decay * p);
  }
}

void rmsprop_step(NetParams& params, const NetParams& grads, RmspropState& state, const RmspropHyper& hyper) {
  if (params.config != grads.config || params.config != state.mean_square.config) {
    throw ArgumentError("rmsprop_step: parameter, gradient and state shapes differ");
  }
  auto p = params.groups();
  auto g = grads.groups();
  auto s = state.mean_square.groups();
  for (std::size_t i = 0; i < p.size(); ++i) rmsprop_update(p[i]->values(), g[i]->values(), s[i]->values(), hyper);
}

// ---------------------------------------------------------------------------
// Flips
// ---------------------------------------------------------------------------

template <typename Real>
BasicTensor<Real> flip_horizontal(const BasicTensor<Real>& map) {
  if (map.rank() != 3) throw ArgumentError("flip expects an H x W x C map");
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  BasicTensor<Real> out(map.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = map[(y * w + (w - 1 - x)) * c + k];
  return out;
}

template <typename Real>
BasicTensor<Real> flip_vertical(const BasicTensor<Real>& map) {
  if (map.rank() != 3) throw ArgumentError("flip expects an H x W x C map");
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  BasicTensor<Real> out(map.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(y * w + x) * c + k] = map[((h - 1 - y) * w + x) * c + k];
  return out;
}

template BasicTensor<float> flip_horizontal(const BasicTensor<float>&);
template BasicTensor<double> flip_horizontal(const BasicTensor<double>&);
template BasicTensor<float> flip_vertical(const BasicTensor<float>&);
template BasicTensor<double> flip_vertical(const BasicTensor<double>&);

Mask flip_horizontal(const Mask& mask, std::size_t h, std::size_t w) {
  Mask out(mask.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = mask[y * w + (w - 1 - x)];
  return out;
}

Mask flip_vertical(const Mask& mask, std::size_t h, std::size_t w) {
  Mask out(mask.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = mask[(h - 1 - y) * w + x];
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw ArgumentError("train.epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !(lr_drop_factor > 0.0) || !(rmsprop_epsilon >= 0.0) || !(weight_decay >= 0.0)) {
    throw ArgumentError("train rates must be positive");
  }
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) throw ArgumentError("train.rmsprop_decay must lie in [0, 1)");
}

double TrainConfig::learning_rate_at(std::uint32_t epoch) const {
  const std::uint32_t drop = lr_drop_epoch < 0 ? epochs / 2 : static_cast<std::uint32_t>(lr_drop_epoch);
  return epoch >= drop ? learning_rate * lr_drop_factor : learning_rate;
}

TrainResult train(const NetParams& init, const Dataset& dataset, const std::vector<std::size_t>& labelled,
                  const TrainConfig& config, int threads) {
  config.validate();
  if (labelled.empty()) throw ArgumentError("train needs a non-empty labelled set");
  if (init.config.n_classes != dataset.n_classes()) {
    throw ArgumentError("network class count does not match the dataset");
  }
  const std::vector<double> weights = class_weights(dataset, labelled);
  const std::size_t h = dataset.height, w = dataset.width;

  Rng shuffle_rng = Rng::for_purpose(config.seed, purpose::kTrainShuffle);
  Rng augment_rng = Rng::for_purpose(config.seed, purpose::kAugment);

  TrainResult result{init, {}};
  NetParams& params = result.params;
  RmspropState state = RmspropState::for_params(params);
  std::vector<std::size_t> order = labelled;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.below(i + 1)]);
    const RmspropHyper hyper{config.learning_rate_at(epoch), config.rmsprop_decay, config.rmsprop_epsilon,
                             config.weight_decay};
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - start);
      std::vector<Tensor> images(count);
      std::vector<Mask> masks(count);
      double total_weight = 0.0;
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t idx = order[start + b];
        images[b] = dataset.images[idx];
        masks[b] = dataset.masks[idx];
        if (augment_rng.bernoulli(config.hflip_probability)) {
          images[b] = flip_horizontal(images[b]);
          masks[b] = flip_horizontal(masks[b], h, w);
        }
        if (augment_rng.bernoulli(config.vflip_probability)) {
          images[b] = flip_vertical(images[b]);
          masks[b] = flip_vertical(masks[b], h, w);
        }
        total_weight += mask_weight_sum(masks[b], weights);
      }
      std::vector<NetParams> sample_grads(count);
      std::vector<double> sample_nll(count);
      parallel_for(count, threads, [&](std::size_t b) {
        sample_grads[b] = NetParams::zeros(params.config);
        const ForwardPass<float> fp = forward(params, images[b]);
        sample_nll[b] = accumulate_ce_gradient(fp, masks[b], weights, 1.0 / total_weight, sample_grads[b]);
      });
      NetParams grads = std::move(sample_grads[0]);
      double nll = sample_nll[0];
      for (std::size_t b = 1; b < count; ++b) {
        add_scaled(grads, sample_grads[b]);
        nll += sample_nll[b];
      }
      rmsprop_step(params, grads, state, hyper);
      epoch_loss += nll / total_weight;
      ++n_batches;
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(n_batches));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

Tensor predict(const NetParams& params, const Tensor& image) { return forward(params, image).probs; }

std::vector<float> image_embedding(const NetParams& params, const Tensor& image) {
  return global_average_pool(forward(params, image).decoder_features);
}

Mask predict_labels(const NetParams& params, const Tensor& image) {
  const Tensor probs = predict(params, image);
  const std::size_t nc = probs.dim(2);
  Mask labels(probs.dim(0) * probs.dim(1));
  for (std::size_t p = 0; p < labels.size(); ++p) {
    labels[p] = static_cast<std::uint8_t>(argmax_tiebreak_low(probs.values().subspan(p * nc, nc)));
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[] = "ALNP1";
constexpr std::size_t kCheckpointMagicLen = 5;

std::size_t stored_groups(CheckpointKind kind) { return kind == CheckpointKind::kFullSegmentation ? 8 : 6; }
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const NetParams& params, CheckpointKind kind) {
  ByteWriter out;
  out.put_string(std::string(kCheckpointMagic, kCheckpointMagicLen));
  const NetConfig& c = params.config;
  out.put_u32(static_cast<std::uint32_t>(kind));
  out.put_u32(c.in_channels);
  out.put_u32(c.enc1_channels);
  out.put_u32(c.enc2_channels);
  out.put_u32(c.dec_channels);
  out.put_u32(c.n_classes);
  out.put_u32(c.skip_connection ? 1u : 0u);
  const auto groups = params.groups();
  for (std::size_t g = 0; g < stored_groups(kind); ++g) {
    for (float v : groups[g]->values()) out.put_f32(v);
  }
  return out.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (in.get_string(kCheckpointMagicLen) != std::string(kCheckpointMagic, kCheckpointMagicLen)) {
    throw FormatError("params.bin: bad magic (expected ALNP1)", 0);
  }
  const std::size_t kind_offset = in.position();
  const std::uint32_t kind_raw = in.get_u32();
  if (kind_raw > 1) throw FormatError("params.bin: unknown checkpoint kind " + std::to_string(kind_raw), kind_offset);
  const auto kind = static_cast<CheckpointKind>(kind_raw);
  NetConfig c;
  c.in_channels = in.get_u32();
  c.enc1_channels = in.get_u32();
  c.enc2_channels = in.get_u32();
  c.dec_channels = in.get_u32();
  c.n_classes = in.get_u32();
  const std::size_t skip_offset = in.position();
  const std::uint32_t skip = in.get_u32();
  if (skip > 1) throw FormatError("params.bin: skip flag must be 0 or 1", skip_offset);
  c.skip_connection = skip == 1;
  constexpr std::uint32_t kMaxChannels = 4096;
  for (std::uint32_t v : {c.in_channels, c.enc1_channels, c.enc2_channels, c.dec_channels, c.n_classes}) {
    if (v < 1 || v > kMaxChannels) throw FormatError("params.bin: implausible channel count", kind_offset);
  }
  Checkpoint ck{NetParams::zeros(c), kind};
  auto groups = ck.params.groups();
  for (std::size_t g = 0; g < stored_groups(kind); ++g) {
    for (float& v : groups[g]->values()) v = in.get_f32();
  }
  if (in.remaining() != 0) throw FormatError("params.bin: trailing bytes after parameters", in.position());
  if (!ck.params.enc1_w.all_finite() || !ck.params.dec_w.all_finite()) {
    throw ValidationError("params.bin holds non-finite parameters");
  }
  return ck;
}

void save_checkpoint(const NetParams& params, CheckpointKind kind, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_binary_file(path, encode_checkpoint(params, kind));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_binary_file(path)); }

}  // namespace alseg
