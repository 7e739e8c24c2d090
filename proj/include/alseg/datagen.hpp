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

#ifndef ALSEG_DATAGEN_HPP
#define ALSEG_DATAGEN_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alseg/core.hpp"

namespace alseg {

enum class DieVariant { kLogic, kMemory };

std::string to_string(DieVariant v);
DieVariant die_variant_from_string(const std::string& s);

/// Class indices. Logic dies use the first four; memory dies add the pad.
namespace cls {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kPillar = 1;
inline constexpr std::uint8_t kSolder = 2;
inline constexpr std::uint8_t kVoid = 3;
inline constexpr std::uint8_t kPad = 4;
}  // namespace cls

std::vector<std::string> class_names_for(DieVariant v);

/// Parameters of the synthetic bump-scan generator.
///
/// Each image is a vertical copper pillar with a solder ellipse at its foot,
/// an optional pad below the solder (memory dies) and, with probability
/// `void_probability`, a small void strictly inside the solder.
struct SceneSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  DieVariant variant = DieVariant::kMemory;
  double void_probability = 0.3;
  double void_radius_min = 1.0;
  double void_radius_max = 3.0;
  /// One gray level per class, indexed by class id. Must hold at least as
  /// many entries as the variant has classes; extra entries are ignored.
  std::vector<double> intensity_means{0.10, 0.70, 0.45, 0.25, 0.90};
  double noise_sigma = 0.05;
  /// Fraction of images assigned to the training split.
  double train_fraction = 0.8;

  std::size_t n_classes() const { return variant == DieVariant::kMemory ? 5 : 4; }
  /// Throws ArgumentError on a violated invariant.
  void validate() const;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

using Mask = std::vector<std::uint8_t>;

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Tensor> images;  // H x W x 1, values in [0, 1]
  std::vector<Mask> masks;     // H * W class ids, row-major
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::vector<std::string> class_names;
  std::optional<SceneSpec> generator_spec;
  std::uint64_t seed = 0;

  std::size_t size() const { return images.size(); }
  std::size_t n_classes() const { return class_names.size(); }
  std::size_t pixels_per_image() const { return height * width; }

  /// Checks split partition, shapes and mask ranges. Throws ValidationError.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Upper bound on the dataset-level void pixel frequency, checked after
/// generation.
inline constexpr double kMaxVoidFrequency = 0.05;

/// Shape parameters of one generated scene, in pixel units. Pixel (y, x) is
/// tested at its center (y + 0.5, x + 0.5).
struct SceneGeometry {
  double pillar_x0, pillar_x1, pillar_y0, pillar_y1;  // half-open pixel box
  double solder_cx, solder_cy, solder_ax, solder_ay;  // ellipse
  bool has_pad = false;
  double pad_x0 = 0, pad_x1 = 0, pad_y0 = 0, pad_y1 = 0;
  bool has_void = false;
  double void_cx = 0, void_cy = 0, void_rx = 0, void_ry = 0;
};

/// Class of pixel (y, x) under the layering rule: later shapes paint over
/// earlier ones (background, pillar, solder, pad, void).
std::uint8_t rasterize_pixel(const SceneGeometry& g, std::size_t y, std::size_t x);

/// Deterministic for (spec, n_images, seed). When `geometry` is non-null it
/// receives the sampled shapes of every image.
Dataset generate_dataset(const SceneSpec& spec, std::size_t n_images, std::uint64_t seed,
                         std::vector<SceneGeometry>* geometry = nullptr);

ClassDistribution class_frequencies(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// Writes meta.json, images.bin and masks.bin into `directory` (created if
/// missing).
void save_dataset(const Dataset& dataset, const std::filesystem::path& directory);
Dataset load_dataset(const std::filesystem::path& directory);

}  // namespace alseg

#endif  // ALSEG_DATAGEN_HPP
