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

#include "alseg/config.hpp"

#include <set>

#include "alseg/binary_io.hpp"

namespace alseg {

using nlohmann::json;

namespace {

// Strict view over one JSON object: every key read is recorded and
// finish() rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  template <typename Int>
    requires std::is_integral_v<Int> && (!std::is_same_v<Int, bool>)
  void get(const char* key, Int& out) {
    if (const json* v = take(key)) out = to_int<Int>(*v, key);
  }
  void get(const char* key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of numbers");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number()) fail(key, "an array of numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void get(const char* key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of non-negative integers");
      out.clear();
      for (const json& e : *v) out.push_back(to_int<std::size_t>(e, key));
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) fail(key, "an array of strings");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_string()) fail(key, "an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }

  /// Nested object; absent keys yield an empty object.
  Section child(const char* key) {
    static const json kEmpty = json::object();
    const json* v = take(key);
    return Section(v ? *v : kEmpty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown config key '" + qualified(item.key().c_str()) + "'");
    }
  }

  std::string qualified(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* take(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    return &*it;
  }
  [[noreturn]] void fail(const char* key, const char* expected) const {
    throw ConfigError("config key '" + qualified(key) + "' must be " + expected);
  }
  template <typename Int>
  Int to_int(const json& v, const char* key) const {
    if (v.is_number_unsigned()) {
      const auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) fail(key, "an integer in range");
      return static_cast<Int>(u);
    }
    if (v.is_number_integer()) {
      const auto s = v.get<std::int64_t>();
      if (s < static_cast<std::int64_t>(std::numeric_limits<Int>::min()) ||
          (s > 0 && static_cast<std::uint64_t>(s) > static_cast<std::uint64_t>(std::numeric_limits<Int>::max()))) {
        fail(key, "an integer in range");
      }
      return static_cast<Int>(s);
    }
    fail(key, "an integer");
  }
  std::string where() const { return path_.empty() ? "config" : "config section '" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_scene(Section s, SceneSpec& spec) {
  std::string variant = to_string(spec.variant);
  s.get("height", spec.height);
  s.get("width", spec.width);
  s.get("variant", variant);
  s.get("void_probability", spec.void_probability);
  s.get("void_radius_min", spec.void_radius_min);
  s.get("void_radius_max", spec.void_radius_max);
  s.get("intensity_means", spec.intensity_means);
  s.get("noise_sigma", spec.noise_sigma);
  s.get("train_fraction", spec.train_fraction);
  s.finish();
  try {
    spec.variant = die_variant_from_string(variant);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("scene.variant: ") + e.what());
  }
}

template <typename Fn>
void rethrow_as_config(const char* section, Fn&& fn) {
  try {
    fn();
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string(section) + ": " + e.what());
  }
}

}  // namespace

json scene_spec_to_json(const SceneSpec& spec) {
  return json{{"height", spec.height},
              {"width", spec.width},
              {"variant", to_string(spec.variant)},
              {"void_probability", spec.void_probability},
              {"void_radius_min", spec.void_radius_min},
              {"void_radius_max", spec.void_radius_max},
              {"intensity_means", spec.intensity_means},
              {"noise_sigma", spec.noise_sigma},
              {"train_fraction", spec.train_fraction}};
}

SceneSpec scene_spec_from_json(const json& j) {
  SceneSpec spec;
  read_scene(Section(j, "scene"), spec);
  return spec;
}

json run_config_to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const PretrainConfig& p = c.pretrain;
  const AugmentConfig& a = p.augment;
  const ExperimentConfig& e = c.experiment;
  return json{
      {"seed", c.seed},
      {"scene", scene_spec_to_json(c.scene)},
      {"dataset", {{"n_images", c.n_images}}},
      {"net",
       {{"in_channels", c.net.in_channels},
        {"enc1_channels", c.net.enc1_channels},
        {"enc2_channels", c.net.enc2_channels},
        {"dec_channels", c.net.dec_channels},
        {"skip_connection", c.net.skip_connection}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"lr_drop_epoch", t.lr_drop_epoch},
        {"lr_drop_factor", t.lr_drop_factor},
        {"rmsprop_decay", t.rmsprop_decay},
        {"rmsprop_epsilon", t.rmsprop_epsilon},
        {"weight_decay", t.weight_decay},
        {"hflip_probability", t.hflip_probability},
        {"vflip_probability", t.vflip_probability}}},
      {"pretrain",
       {{"temperature", p.temperature},
        {"epochs", p.epochs},
        {"batch_size", p.batch_size},
        {"learning_rate", p.learning_rate},
        {"hidden_dim", p.hidden_dim},
        {"proj_dim", p.proj_dim},
        {"rmsprop_decay", p.rmsprop_decay},
        {"rmsprop_epsilon", p.rmsprop_epsilon},
        {"weight_decay", p.weight_decay},
        {"augment",
         {{"crop", a.crop},
          {"crop_min_area", a.crop_min_area},
          {"crop_max_area", a.crop_max_area},
          {"hflip_probability", a.hflip_probability},
          {"vflip_probability", a.vflip_probability},
          {"brightness", a.brightness}}}}},
      {"acquisition",
       {{"use_rareness", e.acquisition.use_rareness},
        {"use_entropy", e.acquisition.use_entropy},
        {"use_diversity", e.acquisition.use_diversity},
        {"aggregator", to_string(e.acquisition.aggregator)}}},
      {"experiment",
       {{"budgets", e.budgets},
        {"n_seeds", e.n_seeds},
        {"init_mode", to_string(e.init_mode)},
        {"strategies", e.strategies},
        {"grid", e.grid},
        {"record_wall_time", e.record_wall_time},
        {"overlay_images", e.overlay_images}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  read_scene(root.child("scene"), c.scene);
  {
    Section s = root.child("dataset");
    s.get("n_images", c.n_images);
    s.finish();
  }
  {
    Section s = root.child("net");
    s.get("in_channels", c.net.in_channels);
    s.get("enc1_channels", c.net.enc1_channels);
    s.get("enc2_channels", c.net.enc2_channels);
    s.get("dec_channels", c.net.dec_channels);
    s.get("skip_connection", c.net.skip_connection);
    s.finish();
  }
  {
    TrainConfig& t = c.train;
    Section s = root.child("train");
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.learning_rate);
    s.get("lr_drop_epoch", t.lr_drop_epoch);
    s.get("lr_drop_factor", t.lr_drop_factor);
    s.get("rmsprop_decay", t.rmsprop_decay);
    s.get("rmsprop_epsilon", t.rmsprop_epsilon);
    s.get("weight_decay", t.weight_decay);
    s.get("hflip_probability", t.hflip_probability);
    s.get("vflip_probability", t.vflip_probability);
    s.finish();
  }
  {
    PretrainConfig& p = c.pretrain;
    Section s = root.child("pretrain");
    s.get("temperature", p.temperature);
    s.get("epochs", p.epochs);
    s.get("batch_size", p.batch_size);
    s.get("learning_rate", p.learning_rate);
    s.get("hidden_dim", p.hidden_dim);
    s.get("proj_dim", p.proj_dim);
    s.get("rmsprop_decay", p.rmsprop_decay);
    s.get("rmsprop_epsilon", p.rmsprop_epsilon);
    s.get("weight_decay", p.weight_decay);
    Section a = s.child("augment");
    a.get("crop", p.augment.crop);
    a.get("crop_min_area", p.augment.crop_min_area);
    a.get("crop_max_area", p.augment.crop_max_area);
    a.get("hflip_probability", p.augment.hflip_probability);
    a.get("vflip_probability", p.augment.vflip_probability);
    a.get("brightness", p.augment.brightness);
    a.finish();
    s.finish();
  }
  std::string aggregator = to_string(c.experiment.acquisition.aggregator);
  {
    AcquisitionConfig& q = c.experiment.acquisition;
    Section s = root.child("acquisition");
    s.get("use_rareness", q.use_rareness);
    s.get("use_entropy", q.use_entropy);
    s.get("use_diversity", q.use_diversity);
    s.get("aggregator", aggregator);
    s.finish();
  }
  std::string init_mode = to_string(c.experiment.init_mode);
  {
    ExperimentConfig& e = c.experiment;
    Section s = root.child("experiment");
    s.get("budgets", e.budgets);
    s.get("n_seeds", e.n_seeds);
    s.get("init_mode", init_mode);
    s.get("strategies", e.strategies);
    s.get("grid", e.grid);
    s.get("record_wall_time", e.record_wall_time);
    s.get("overlay_images", e.overlay_images);
    s.finish();
  }
  root.finish();
  rethrow_as_config("acquisition.aggregator",
                    [&] { c.experiment.acquisition.aggregator = aggregator_from_string(aggregator); });
  rethrow_as_config("experiment.init_mode", [&] { c.experiment.init_mode = init_mode_from_string(init_mode); });
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  net.n_classes = static_cast<std::uint32_t>(scene.n_classes());
  train.seed = seed;
  pretrain.seed = seed;
  rethrow_as_config("scene", [&] { scene.validate(); });
  if (n_images < 10) throw ConfigError("dataset.n_images must be >= 10");
  rethrow_as_config("net", [&] { net.validate(); });
  if (scene.height % 2 != 0 || scene.width % 2 != 0) {
    throw ConfigError("scene.height and scene.width must be even (one pooling stage)");
  }
  rethrow_as_config("train", [&] { train.validate(); });
  rethrow_as_config("pretrain", [&] { pretrain.validate(); });
  rethrow_as_config("experiment", [&] { experiment.validate(); });
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(text);
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
  write_text_file(path, run_config_to_json(config).dump(2) + "\n");
}

}  // namespace alseg
