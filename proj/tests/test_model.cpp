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


#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "alseg/binary_io.hpp"
#include "alseg/datagen.hpp"
#include "alseg/model.hpp"
#include "alseg/verify.hpp"
#include "doctest.h"

using namespace alseg;

namespace {

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w, 1});
  for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

Tensor probs_from_rows(const std::vector<std::vector<float>>& rows) {
  const std::size_t c = rows.front().size();
  Tensor t({rows.size(), 1, c});
  for (std::size_t p = 0; p < rows.size(); ++p) {
    for (std::size_t k = 0; k < c; ++k) t[p * c + k] = rows[p][k];
  }
  return t;
}

// Mirror every 3x3 kernel left to right.
Tensor mirror_kernel(const Tensor& w) {
  Tensor out(w.shape());
  const std::size_t ci = w.dim(2), co = w.dim(3);
  for (std::size_t ky = 0; ky < 3; ++ky) {
    for (std::size_t kx = 0; kx < 3; ++kx) {
      for (std::size_t i = 0; i < ci * co; ++i) out[((ky * 3 + kx) * ci * co) + i] = w[((ky * 3 + 2 - kx) * ci * co) + i];
    }
  }
  return out;
}

Dataset single_image_dataset(std::uint64_t seed) {
  Dataset full = generate_dataset(SceneSpec{}, 10, seed);
  Dataset ds;
  ds.height = full.height;
  ds.width = full.width;
  ds.class_names = full.class_names;
  ds.images = {full.images[0]};
  ds.masks = {full.masks[0]};
  ds.train_indices = {0};
  return ds;
}

double norm(const NetParams& g) {
  double s = 0.0;
  for (const Tensor* t : g.groups()) {
    for (float v : t->values()) s += static_cast<double>(v) * v;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("zero weights give uniform posteriors") {
  NetConfig c;
  const NetParams zero = NetParams::zeros(c);
  Rng rng(1);
  const ForwardPass<float> fp = forward(zero, random_image(8, 6, rng));
  for (float p : fp.probs.values()) CHECK(p == doctest::Approx(0.2f).epsilon(1e-6));
}

TEST_CASE("forward shapes and normalised rows over random cases") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    NetConfig c;
    c.enc1_channels = 1 + static_cast<std::uint32_t>(rng.below(8));
    c.enc2_channels = 1 + static_cast<std::uint32_t>(rng.below(8));
    c.dec_channels = 1 + static_cast<std::uint32_t>(rng.below(8));
    c.n_classes = 2 + static_cast<std::uint32_t>(rng.below(4));
    c.skip_connection = rng.bernoulli(0.5);
    const std::size_t h = 2 * (1 + rng.below(6)), w = 2 * (1 + rng.below(6));
    const NetParams p = init_params(c, rng.next_u64());
    const ForwardPass<float> fp = forward(p, random_image(h, w, rng));
    REQUIRE(fp.probs.shape() == std::vector<std::size_t>{h, w, c.n_classes});
    REQUIRE(fp.decoder_features.shape() == std::vector<std::size_t>{h, w, c.dec_channels});
    for (std::size_t px = 0; px < h * w; ++px) {
      double s = 0.0;
      for (std::size_t k = 0; k < c.n_classes; ++k) s += fp.probs[px * c.n_classes + k];
      REQUIRE(std::abs(s - 1.0) < 1e-5);
    }
  }
  const NetParams p = init_params(NetConfig{}, 3);
  CHECK_THROWS_AS(forward(p, Tensor({5, 4, 1})), ArgumentError);
  CHECK_THROWS_AS(forward(p, Tensor({4, 4, 2})), ArgumentError);
}

TEST_CASE("weighted cross-entropy examples") {
  const std::vector<double> w1{1.0, 3.0};
  const Tensor probs = probs_from_rows({{0.8f, 0.2f}, {0.4f, 0.6f}});
  const double expected = (-std::log(0.8) - 3.0 * std::log(0.6)) / 4.0;
  CHECK(std::abs(expected - 0.438905) < 1e-6);
  CHECK(std::abs(weighted_cross_entropy(probs, Mask{0, 1}, w1) - expected) < 1e-6);

  const Tensor onehot = probs_from_rows({{1, 0, 0}, {0, 0, 1}});
  CHECK(weighted_cross_entropy(onehot, Mask{0, 2}, std::vector<double>{1, 2, 3}) < 1e-9);
  // The clamp keeps a zero probability finite.
  const double clamped = weighted_cross_entropy(onehot, Mask{1, 2}, std::vector<double>{1, 1, 1});
  CHECK(std::abs(clamped - (-std::log(1e-12) / 2.0)) < 1e-6);

  const Tensor uniform = probs_from_rows({{0.25f, 0.25f, 0.25f, 0.25f}, {0.25f, 0.25f, 0.25f, 0.25f}});
  CHECK(std::abs(weighted_cross_entropy(uniform, Mask{3, 1}, std::vector<double>{0.1, 5, 1, 2}) - std::log(4.0)) < 1e-6);

  CHECK_THROWS_AS(weighted_cross_entropy(probs, Mask{0, 2}, w1), ArgumentError);
}

TEST_CASE("class weights") {
  for (double w : class_weights_from_frequencies(ClassDistribution({0.25, 0.25, 0.25, 0.25}))) {
    CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto w = class_weights_from_frequencies(ClassDistribution({0.9, 0.1}));
  CHECK(std::abs(w[0] - 0.2) < 1e-9);
  CHECK(std::abs(w[1] - 1.8) < 1e-9);

  const auto a = class_weights_from_frequencies(ClassDistribution({0.5, 0.5, 0.0}));
  const double mean_raw = (2.0 + 2.0 + 1e6) / 3.0;
  CHECK(std::isfinite(a[2]));
  CHECK(a[2] == doctest::Approx(1e6 / mean_raw).epsilon(1e-12));
  CHECK(a[0] == doctest::Approx(2.0 / mean_raw).epsilon(1e-12));

  Dataset ds = generate_dataset(SceneSpec{}, 20, 1);
  const auto cw = class_weights(ds, {0, 1, 2});
  const auto ref = class_weights_from_frequencies(class_frequencies(ds, {0, 1, 2}));
  CHECK(cw == ref);
}

TEST_CASE("backward matches finite differences") {
  const GradCheckReport f64 = check_ce_gradients(20, 4321, Precision::kFloat64);
  CHECK(f64.instances == 20);
  CHECK(f64.max_rel_error < 1e-4);
  CHECK(f64.groups.size() == 8);
  const GradCheckReport f32 = check_ce_gradients(20, 4321, Precision::kFloat32);
  CHECK(f32.max_rel_error < 1e-2);
  CHECK(f32.passed);
}

TEST_CASE("gradient vanishes at a confident correct prediction") {
  NetConfig c;
  c.n_classes = 3;
  NetParams p = init_params(c, 4);
  p.head_w.fill(0.0f);
  p.head_b[0] = 60.0f;
  Rng rng(4);
  const ForwardPass<float> fp = forward(p, random_image(8, 8, rng));
  const std::vector<double> w{1, 1, 1};
  const Mask mask(64, 0);
  CHECK(weighted_cross_entropy(fp.probs, mask, w) < 1e-12);
  CHECK(norm(backward(fp, mask, w)) < 1e-6);
}

TEST_CASE("duplicating the pixels leaves the normalised gradient unchanged") {
  Rng rng(5);
  const NetParams p = init_params(NetConfig{}, 5);
  const ForwardPass<float> fp = forward(p, random_image(8, 8, rng));
  Mask mask(64);
  for (auto& m : mask) m = static_cast<std::uint8_t>(rng.below(5));
  const std::vector<double> w{0.5, 1, 2, 1.5, 0.2};
  const NetParams once = backward(fp, mask, w);
  NetParams twice = NetParams::zeros(p.config);
  const double total = 2.0 * mask_weight_sum(mask, w);
  accumulate_ce_gradient(fp, mask, w, 1.0 / total, twice);
  accumulate_ce_gradient(fp, mask, w, 1.0 / total, twice);
  const auto a = once.groups();
  const auto b = std::as_const(twice).groups();
  for (std::size_t g = 0; g < a.size(); ++g) {
    for (std::size_t k = 0; k < a[g]->size(); ++k) {
      REQUIRE(std::abs((*a[g])[k] - (*b[g])[k]) <= 1e-6f * std::max(1.0f, std::abs((*a[g])[k])));
    }
  }
}

TEST_CASE("rmsprop update") {
  std::vector<float> p{1.0f, -2.0f}, s{0.0f, 0.0f};
  const std::vector<float> zero{0.0f, 0.0f};
  rmsprop_update(p, zero, s, {0.1, 0.9, 1e-8, 0.0});
  CHECK(p == std::vector<float>{1.0f, -2.0f});

  std::vector<float> q{0.0f}, sq{0.0f};
  rmsprop_update(q, std::vector<float>{1.0f}, sq, {0.1, 0.9, 0.0, 0.0});
  CHECK(std::abs(q[0] - (-0.316228)) < 1e-5);
  CHECK(std::abs(sq[0] - 0.1f) < 1e-7);

  // Weight decay term: p <- p - lr * wd * p when g = 0.
  std::vector<float> r{2.0f}, sr{0.0f};
  rmsprop_update(r, std::vector<float>{0.0f}, sr, {0.1, 0.9, 1e-8, 0.5});
  CHECK(r[0] == doctest::Approx(2.0f - 0.1f * 0.5f * 2.0f));

  const NetParams params = init_params(NetConfig{}, 6);
  NetParams grads = init_params(NetConfig{}, 7);
  NetParams a = params, b = params;
  RmspropState sa = RmspropState::for_params(params), sb = RmspropState::for_params(params);
  rmsprop_step(a, grads, sa, RmspropHyper{});
  rmsprop_step(b, grads, sb, RmspropHyper{});
  CHECK(a == b);
  CHECK(sa.mean_square == sb.mean_square);
}

TEST_CASE("learning-rate schedule drops at mid-training") {
  TrainConfig t;
  CHECK(t.learning_rate_at(0) == 1e-3);
  CHECK(t.learning_rate_at(24) == 1e-3);
  CHECK(t.learning_rate_at(25) == doctest::Approx(1e-4));
  t.epochs = 0;
  CHECK_THROWS_AS(t.validate(), ArgumentError);
}

TEST_CASE("training memorises one image") {
  const Dataset ds = single_image_dataset(8);
  TrainConfig t;
  t.epochs = 200;
  t.batch_size = 1;
  t.learning_rate = 1e-2;
  t.hflip_probability = 0.0;
  t.vflip_probability = 0.0;
  t.seed = 8;
  const NetParams init = init_params(NetConfig{}, 8);
  const TrainResult r = train(init, ds, {0}, t);
  REQUIRE(r.loss_history.size() == 200);
  CHECK(r.loss_history.back() < 0.05);
  std::size_t down = 0;
  for (std::size_t e = 1; e < r.loss_history.size(); ++e) down += r.loss_history[e] <= r.loss_history[e - 1];
  CHECK(static_cast<double>(down) >= 0.8 * static_cast<double>(r.loss_history.size() - 1));

  const TrainResult again = train(init, ds, {0}, t);
  CHECK(again.params == r.params);
  CHECK(again.loss_history == r.loss_history);
}

TEST_CASE("training is independent of the thread count") {
  const Dataset ds = generate_dataset(SceneSpec{}, 20, 9);
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 4;
  t.seed = 9;
  const NetParams init = init_params(NetConfig{}, 9);
  const std::vector<std::size_t> labelled(ds.train_indices.begin(), ds.train_indices.begin() + 10);
  CHECK(train(init, ds, labelled, t, 1).params == train(init, ds, labelled, t, 4).params);
  CHECK_THROWS_AS(train(init, ds, {}, t), ArgumentError);
}

TEST_CASE("embedding is the pooled decoder output") {
  Rng rng(10);
  const NetParams p = init_params(NetConfig{}, 10);
  const Tensor img = random_image(16, 16, rng);
  const ForwardPass<float> fp = forward(p, img);
  const std::vector<float> e = image_embedding(p, img);
  REQUIRE(e.size() == 8);
  for (std::size_t f = 0; f < 8; ++f) {
    double s = 0.0;
    for (std::size_t px = 0; px < 256; ++px) s += fp.decoder_features[px * 8 + f];
    CHECK(e[f] == doctest::Approx(s / 256.0).epsilon(1e-6));
  }
  CHECK(predict(p, img) == fp.probs);

  NetParams flat = p;
  flat.dec_w.fill(0.0f);
  flat.dec_b.fill(0.75f);
  for (float v : image_embedding(flat, img)) CHECK(v == 0.75f);
}

TEST_CASE("mirrored kernels commute with flipping the input") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    NetConfig c;
    c.skip_connection = rng.bernoulli(0.5);
    NetParams p = init_params(c, rng.next_u64());
    for (Tensor* b : {&p.enc1_b, &p.enc2_b, &p.dec_b, &p.head_b}) {
      for (float& v : b->values()) v = static_cast<float>(0.1 * rng.normal());
    }
    NetParams m = p;
    m.enc1_w = mirror_kernel(p.enc1_w);
    m.enc2_w = mirror_kernel(p.enc2_w);
    m.dec_w = mirror_kernel(p.dec_w);
    const Tensor img = random_image(16, 16, rng);
    Mask mask(256);
    for (auto& v : mask) v = static_cast<std::uint8_t>(rng.below(5));
    const std::vector<double> w{1, 2, 0.5, 3, 1};
    const double base = weighted_cross_entropy(forward(p, img).probs, mask, w);
    const double flipped =
        weighted_cross_entropy(forward(m, flip_horizontal(img)).probs, flip_horizontal(mask, 16, 16), w);
    CHECK(std::abs(base - flipped) < 1e-5);
  }
}

TEST_CASE("flips are involutions") {
  Rng rng(13);
  const Tensor img = random_image(6, 4, rng);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_vertical(flip_vertical(img)) == img);
  CHECK(flip_horizontal(img)[0] == img[3]);
  CHECK(flip_vertical(img)[0] == img[20]);
  const Mask m{0, 1, 2, 3, 4, 5};
  CHECK(flip_horizontal(m, 2, 3) == Mask{2, 1, 0, 5, 4, 3});
  CHECK(flip_vertical(m, 2, 3) == Mask{3, 4, 5, 0, 1, 2});
}

TEST_CASE("checkpoints round trip") {
  const NetParams p = init_params(NetConfig{}, 14);
  const auto full = encode_checkpoint(p, CheckpointKind::kFullSegmentation);
  CHECK(std::string(full.begin(), full.begin() + 5) == "ALNP1");
  const Checkpoint back = decode_checkpoint(full);
  CHECK(back.kind == CheckpointKind::kFullSegmentation);
  CHECK(back.params == p);
  CHECK(full.size() == 5 + 7 * 4 + 4 * p.parameter_count());

  const auto pre = encode_checkpoint(p, CheckpointKind::kPretrainedEncoderDecoder);
  const Checkpoint pb = decode_checkpoint(pre);
  CHECK(pb.kind == CheckpointKind::kPretrainedEncoderDecoder);
  CHECK(pb.params.dec_w == p.dec_w);
  CHECK(pb.params.head_w == NetParams::zeros(p.config).head_w);
  CHECK(pre.size() == full.size() - 4 * (p.head_w.size() + p.head_b.size()));

  auto cut = full;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  auto bad = full;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  auto extra = full;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);
}
