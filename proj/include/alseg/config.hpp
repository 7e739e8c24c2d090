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

#ifndef ALSEG_CONFIG_HPP
#define ALSEG_CONFIG_HPP

// Single JSON run configuration. Every field has a default; unknown keys
// are rejected with ConfigError.
//
//   {
//     "seed": 0,
//     "scene":       { height, width, variant, void_probability, void_radius_min,
//                      void_radius_max, intensity_means, noise_sigma, train_fraction },
//     "dataset":     { n_images },
//     "net":         { in_channels, enc1_channels, enc2_channels, dec_channels, skip_connection },
//     "train":       { epochs, batch_size, learning_rate, lr_drop_epoch, lr_drop_factor,
//                      rmsprop_decay, rmsprop_epsilon, weight_decay, hflip_probability,
//                      vflip_probability },
//     "pretrain":    { temperature, epochs, batch_size, learning_rate, hidden_dim, proj_dim,
//                      rmsprop_decay, rmsprop_epsilon, weight_decay,
//                      augment: { crop, crop_min_area, crop_max_area, hflip_probability,
//                                 vflip_probability, brightness } },
//     "acquisition": { use_rareness, use_entropy, use_diversity, aggregator },
//     "experiment":  { budgets, n_seeds, init_mode, strategies, grid, record_wall_time,
//                      overlay_images }
//   }
//
// net.n_classes follows from scene.variant and is not configurable.

#include <cstdint>
#include <filesystem>
#include <string>

#include "alseg/contrastive.hpp"
#include "alseg/datagen.hpp"
#include "alseg/experiment.hpp"
#include "alseg/model.hpp"
#include "json.hpp"

namespace alseg {

struct RunConfig {
  std::uint64_t seed = 0;
  SceneSpec scene;
  std::size_t n_images = 375;
  NetConfig net;
  TrainConfig train;
  PretrainConfig pretrain;
  ExperimentConfig experiment;

  /// Propagates seed and class count into the nested configs and validates
  /// everything. Throws ConfigError.
  void finalize();
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
/// Missing keys take defaults; unknown keys throw ConfigError.
SceneSpec scene_spec_from_json(const nlohmann::json& j);

nlohmann::json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Writes the effective config as pretty JSON.
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace alseg

#endif  // ALSEG_CONFIG_HPP
