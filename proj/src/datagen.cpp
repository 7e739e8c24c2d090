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

#include "alseg/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "alseg/binary_io.hpp"
#include "alseg/config.hpp"
#include "json.hpp"

namespace alseg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DieVariant v) { return v == DieVariant::kMemory ? "memory" : "logic"; }

DieVariant die_variant_from_string(const std::string& s) {
  if (s == "memory") return DieVariant::kMemory;
  if (s == "logic") return DieVariant::kLogic;
  throw ArgumentError("unknown die variant '" + s + "' (expected logic|memory)");
}

std::vector<std::string> class_names_for(DieVariant v) {
  std::vector<std::string> names{"background", "pillar", "solder", "void"};
  if (v == DieVariant::kMemory) names.emplace_back("pad");
  return names;
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ArgumentError("scene height and width must be positive");
  if (!(void_probability >= 0.0 && void_probability <= 1.0)) {
    throw ArgumentError("void_probability must lie in [0, 1]");
  }
  if (!(void_radius_min >= 1.0) || !(void_radius_max >= void_radius_min)) {
    throw ArgumentError("void radius range must satisfy 1 <= min <= max");
  }
  if (!(noise_sigma >= 0.0)) throw ArgumentError("noise_sigma must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ArgumentError("train_fraction must lie in (0, 1)");
  const std::size_t n = n_classes();
  if (intensity_means.size() < n) {
    throw ArgumentError("intensity_means needs " + std::to_string(n) + " entries for the " +
                        to_string(variant) + " variant");
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (!(intensity_means[a] >= 0.0 && intensity_means[a] <= 1.0)) {
      throw ArgumentError("intensity means must lie in [0, 1]");
    }
    for (std::size_t b = a + 1; b < n; ++b) {
      if (std::abs(intensity_means[a] - intensity_means[b]) < 0.1 - 1e-12) {
        throw ArgumentError("intensity means of classes " + std::to_string(a) + " and " + std::to_string(b) +
                            " differ by less than 0.1");
      }
    }
  }
}

void Dataset::validate() const {
  const std::size_t n = images.size();
  if (masks.size() != n) throw ValidationError("image and mask counts differ");
  if (class_names.empty() || class_names.size() > 255) throw ValidationError("class count must be in 1..255");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& shape = images[i].shape();
    if (shape != std::vector<std::size_t>{height, width, 1}) {
      throw ValidationError("image " + std::to_string(i) + " is not " + std::to_string(height) + "x" +
                            std::to_string(width) + "x1");
    }
    if (masks[i].size() != height * width) throw ValidationError("mask " + std::to_string(i) + " has wrong size");
    for (std::uint8_t c : masks[i]) {
      if (c >= class_names.size()) {
        throw ValidationError("mask " + std::to_string(i) + " holds class " + std::to_string(c) + " but only " +
                              std::to_string(class_names.size()) + " classes are declared");
      }
    }
  }
  std::vector<int> seen(n, 0);
  for (const auto* list : {&train_indices, &test_indices}) {
    for (std::size_t idx : *list) {
      if (idx >= n) throw ValidationError("split index " + std::to_string(idx) + " out of range");
      if (seen[idx]++) throw ValidationError("split index " + std::to_string(idx) + " appears twice");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ValidationError("train/test split does not cover every image");
  }
}

std::uint8_t rasterize_pixel(const SceneGeometry& g, std::size_t y, std::size_t x) {
  const double py = static_cast<double>(y) + 0.5;
  const double px = static_cast<double>(x) + 0.5;
  auto in_box = [&](double x0, double x1, double y0, double y1) { return px >= x0 && px < x1 && py >= y0 && py < y1; };
  auto in_ellipse = [&](double cx, double cy, double ax, double ay) {
    const double dx = (px - cx) / ax;
    const double dy = (py - cy) / ay;
    return dx * dx + dy * dy <= 1.0;
  };
  std::uint8_t c = cls::kBackground;
  if (in_box(g.pillar_x0, g.pillar_x1, g.pillar_y0, g.pillar_y1)) c = cls::kPillar;
  if (in_ellipse(g.solder_cx, g.solder_cy, g.solder_ax, g.solder_ay)) c = cls::kSolder;
  if (g.has_pad && in_box(g.pad_x0, g.pad_x1, g.pad_y0, g.pad_y1)) c = cls::kPad;
  if (g.has_void && in_ellipse(g.void_cx, g.void_cy, g.void_rx, g.void_ry)) c = cls::kVoid;
  return c;
}

namespace {

constexpr std::size_t kMinSide = 8;
constexpr int kVoidPlacementAttempts = 200;

Mask rasterize(const SceneGeometry& g, std::size_t h, std::size_t w) {
  Mask m(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) m[y * w + x] = rasterize_pixel(g, y, x);
  }
  return m;
}

// Void must cover only solder pixels, be non-empty, and every 4-neighbour of
// a void pixel must be inside the image and be solder or void.
bool void_strictly_inside_solder(const Mask& without_void, const Mask& with_void, std::size_t h, std::size_t w) {
  bool any = false;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (with_void[y * w + x] != cls::kVoid) continue;
      any = true;
      if (without_void[y * w + x] != cls::kSolder) return false;
      if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) return false;
      const std::size_t nbrs[4] = {(y - 1) * w + x, (y + 1) * w + x, y * w + x - 1, y * w + x + 1};
      for (std::size_t n : nbrs) {
        if (with_void[n] != cls::kVoid && with_void[n] != cls::kSolder) return false;
      }
    }
  }
  return any;
}

SceneGeometry sample_geometry(const SceneSpec& spec, Rng& rng) {
  const double H = static_cast<double>(spec.height);
  const double W = static_cast<double>(spec.width);
  SceneGeometry g{};
  const double pillar_w = rng.uniform(0.3, 0.5) * W;
  const double cx = rng.uniform(0.35, 0.65) * W;
  g.pillar_x0 = cx - 0.5 * pillar_w;
  g.pillar_x1 = cx + 0.5 * pillar_w;
  g.pillar_y0 = rng.uniform(0.0, 0.1) * H;
  g.pillar_y1 = rng.uniform(0.5, 0.6) * H;
  g.solder_cx = cx;
  g.solder_cy = g.pillar_y1;
  g.solder_ax = 0.5 * pillar_w * rng.uniform(1.0, 1.3);
  g.solder_ay = rng.uniform(0.12, 0.18) * H;
  if (spec.variant == DieVariant::kMemory) {
    const double pad_w = pillar_w * rng.uniform(1.1, 1.5);
    g.has_pad = true;
    g.pad_x0 = cx - 0.5 * pad_w;
    g.pad_x1 = cx + 0.5 * pad_w;
    g.pad_y0 = g.solder_cy + 0.6 * g.solder_ay;
    g.pad_y1 = std::min(H, g.pad_y0 + rng.uniform(0.12, 0.2) * H);
  }
  return g;
}

void place_void(const SceneSpec& spec, SceneGeometry& g, Rng& rng) {
  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  const Mask base = rasterize(g, h, w);
  for (int attempt = 0; attempt < kVoidPlacementAttempts; ++attempt) {
    SceneGeometry candidate = g;
    candidate.has_void = true;
    candidate.void_rx = rng.uniform(spec.void_radius_min, spec.void_radius_max);
    candidate.void_ry = rng.uniform(spec.void_radius_min, spec.void_radius_max);
    candidate.void_cx = g.solder_cx + rng.uniform(-1.0, 1.0) * std::max(0.0, g.solder_ax - candidate.void_rx - 1.0);
    candidate.void_cy = g.solder_cy + rng.uniform(-1.0, 1.0) * std::max(0.0, g.solder_ay - candidate.void_ry - 1.0);
    if (void_strictly_inside_solder(base, rasterize(candidate, h, w), h, w)) {
      g = candidate;
      return;
    }
  }
  throw GenerationError("void cannot be placed strictly inside the solder region for a " + std::to_string(h) + "x" +
                        std::to_string(w) + " scene with void radii in [" + std::to_string(spec.void_radius_min) +
                        ", " + std::to_string(spec.void_radius_max) + "]");
}

}  // namespace

Dataset generate_dataset(const SceneSpec& spec, std::size_t n_images, std::uint64_t seed,
                         std::vector<SceneGeometry>* geometry) {
  spec.validate();
  if (n_images < 10) throw ArgumentError("generate_dataset needs at least 10 images");
  if (spec.height < kMinSide || spec.width < kMinSide) {
    throw GenerationError("scene must be at least " + std::to_string(kMinSide) + "x" + std::to_string(kMinSide) +
                          " pixels to place pillar, solder and void");
  }

  Rng rng(seed);
  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.class_names = class_names_for(spec.variant);
  ds.generator_spec = spec;
  ds.seed = seed;
  ds.images.reserve(n_images);
  ds.masks.reserve(n_images);
  if (geometry) geometry->clear();

  const std::size_t h = spec.height;
  const std::size_t w = spec.width;
  for (std::size_t i = 0; i < n_images; ++i) {
    SceneGeometry g = sample_geometry(spec, rng);
    if (rng.bernoulli(spec.void_probability)) place_void(spec, g, rng);
    Mask mask = rasterize(g, h, w);
    Tensor image({h, w, 1});
    for (std::size_t p = 0; p < h * w; ++p) {
      const double v = spec.intensity_means[mask[p]] + spec.noise_sigma * rng.normal();
      image[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    ds.images.push_back(std::move(image));
    ds.masks.push_back(std::move(mask));
    if (geometry) geometry->push_back(g);
  }

  std::vector<std::size_t> order(n_images);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n_images - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n_images)));
  ds.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  ds.test_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());

  std::vector<std::size_t> all(n_images);
  std::iota(all.begin(), all.end(), 0);
  const double void_freq = class_frequencies(ds, all)[cls::kVoid];
  if (void_freq >= kMaxVoidFrequency) {
    throw GenerationError("void pixel frequency " + std::to_string(void_freq) + " is not below " +
                          std::to_string(kMaxVoidFrequency));
  }
  return ds;
}

ClassDistribution class_frequencies(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("class_frequencies needs at least one image");
  std::vector<std::uint64_t> counts(dataset.n_classes(), 0);
  for (std::size_t idx : indices) {
    if (idx >= dataset.size()) throw ArgumentError("image index " + std::to_string(idx) + " out of range");
    for (std::uint8_t c : dataset.masks[idx]) ++counts[c];
  }
  const double total = static_cast<double>(indices.size() * dataset.pixels_per_image());
  std::vector<double> probs(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) probs[c] = static_cast<double>(counts[c]) / total;
  return ClassDistribution(std::move(probs));
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

void save_dataset(const Dataset& dataset, const fs::path& directory) {
  dataset.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  json meta;
  meta["version"] = 1;
  meta["height"] = dataset.height;
  meta["width"] = dataset.width;
  meta["n_images"] = dataset.size();
  meta["class_names"] = dataset.class_names;
  meta["train_indices"] = dataset.train_indices;
  meta["test_indices"] = dataset.test_indices;
  meta["generator_spec"] = dataset.generator_spec ? scene_spec_to_json(*dataset.generator_spec) : json(nullptr);
  meta["seed"] = dataset.seed;
  write_text_file(directory / "meta.json", meta.dump(2) + "\n");

  ByteWriter images;
  for (const auto& img : dataset.images) {
    for (float v : img.values()) images.put_f32(v);
  }
  write_binary_file(directory / "images.bin", images.bytes());

  std::vector<std::uint8_t> masks;
  masks.reserve(dataset.size() * dataset.pixels_per_image());
  for (const auto& m : dataset.masks) masks.insert(masks.end(), m.begin(), m.end());
  write_binary_file(directory / "masks.bin", masks);
}

Dataset load_dataset(const fs::path& directory) {
  const std::string meta_text = read_text_file(directory / "meta.json");
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("meta.json is not valid JSON: ") + e.what(), e.byte);
  }
  Dataset ds;
  std::size_t n = 0;
  try {
    if (meta.at("version").get<int>() != 1) {
      throw FormatError("unsupported dataset version " + meta.at("version").dump(), 0);
    }
    ds.height = meta.at("height").get<std::size_t>();
    ds.width = meta.at("width").get<std::size_t>();
    n = meta.at("n_images").get<std::size_t>();
    ds.class_names = meta.at("class_names").get<std::vector<std::string>>();
    ds.train_indices = meta.at("train_indices").get<std::vector<std::size_t>>();
    ds.test_indices = meta.at("test_indices").get<std::vector<std::size_t>>();
    if (meta.contains("generator_spec") && !meta.at("generator_spec").is_null()) {
      ds.generator_spec = scene_spec_from_json(meta.at("generator_spec"));
    }
    ds.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), 0);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("meta.json generator_spec: ") + e.what(), 0);
  }

  const std::size_t pixels = ds.height * ds.width;
  const std::vector<std::uint8_t> image_bytes = read_binary_file(directory / "images.bin");
  const std::uint64_t expected_image_bytes = static_cast<std::uint64_t>(n) * pixels * 4;
  if (image_bytes.size() < expected_image_bytes) {
    throw FormatError("images.bin truncated: expected " + std::to_string(expected_image_bytes) + " bytes, found " +
                          std::to_string(image_bytes.size()),
                      image_bytes.size());
  }
  if (image_bytes.size() > expected_image_bytes) {
    throw FormatError("images.bin has trailing bytes beyond N*H*W float32 values", expected_image_bytes);
  }
  const std::vector<std::uint8_t> mask_bytes = read_binary_file(directory / "masks.bin");
  const std::uint64_t expected_mask_bytes = static_cast<std::uint64_t>(n) * pixels;
  if (mask_bytes.size() != expected_mask_bytes) {
    throw FormatError("masks.bin length " + std::to_string(mask_bytes.size()) + " does not equal N*H*W = " +
                          std::to_string(expected_mask_bytes),
                      std::min<std::uint64_t>(mask_bytes.size(), expected_mask_bytes));
  }

  ByteReader reader(image_bytes);
  ds.images.reserve(n);
  ds.masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img({ds.height, ds.width, 1});
    for (std::size_t p = 0; p < pixels; ++p) img[p] = reader.get_f32();
    ds.images.push_back(std::move(img));
    ds.masks.emplace_back(mask_bytes.begin() + static_cast<std::ptrdiff_t>(i * pixels),
                          mask_bytes.begin() + static_cast<std::ptrdiff_t>((i + 1) * pixels));
  }
  for (std::size_t b = 0; b < mask_bytes.size(); ++b) {
    if (mask_bytes[b] >= ds.class_names.size()) {
      throw ValidationError("masks.bin byte " + std::to_string(b) + " holds class " + std::to_string(mask_bytes[b]) +
                            " but meta.json declares " + std::to_string(ds.class_names.size()) + " classes");
    }
  }
  ds.validate();
  return ds;
}

}  // namespace alseg
