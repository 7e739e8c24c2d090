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


#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "alseg/binary_io.hpp"
#include "alseg/commands.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace alseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const char* root = std::getenv("ALSEG_TEST_TMP");
  fs::path p = fs::path(root ? root : fs::temp_directory_path().string()) / "cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// A config small enough for a seconds-long pipeline.
fs::path tiny_config(const fs::path& dir) {
  nlohmann::json j = {
      {"seed", 5},
      {"scene", {{"height", 24}, {"width", 24}, {"void_radius_max", 2.0}}},
      {"dataset", {{"n_images", 50}}},
      {"train", {{"epochs", 2}, {"batch_size", 8}}},
      {"pretrain", {{"epochs", 2}, {"batch_size", 8}}},
      {"experiment", {{"budgets", {4, 8}}, {"n_seeds", 2}, {"strategies", {"rareness_aware", "random"}}}}};
  const fs::path p = dir / "tiny.json";
  write_text_file(p, j.dump(2));
  return p;
}

nlohmann::json error_json(const Outcome& o) {
  REQUIRE(o.err.find('\n') == o.err.size() - 1);
  return nlohmann::json::parse(o.err);
}

}  // namespace

TEST_CASE("contrastive run without a checkpoint is a config error") {
  const fs::path dir = scratch("no_init");
  const fs::path cfg = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", cfg.string(), "--out", (dir / "data").string()}).code == 0);
  const Outcome o = cli({"run", "--config", cfg.string(), "--data", (dir / "data").string(), "--out",
                         (dir / "run").string(), "--init-mode", "contrastive"});
  CHECK(o.code == 2);
  const auto e = error_json(o);
  CHECK(e["error"] == "ConfigError");
  CHECK(e["exit_code"] == 2);
  CHECK_FALSE(fs::exists(dir / "run" / "curve.csv"));
}

TEST_CASE("usage and configuration errors exit with 2") {
  const fs::path dir = scratch("errors");
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"gen-data"}).code == 2);
  write_text_file(dir / "bad.json", R"({"train": {"epochs": 3, "epoch": 4}})");
  const Outcome unknown = cli({"gen-data", "--config", (dir / "bad.json").string(), "--out", (dir / "d").string()});
  CHECK(unknown.code == 2);
  CHECK(error_json(unknown)["message"].get<std::string>().find("train.epoch") != std::string::npos);
  write_text_file(dir / "type.json", R"({"train": {"epochs": "many"}})");
  CHECK(cli({"gen-data", "--config", (dir / "type.json").string(), "--out", (dir / "d").string()}).code == 2);
  write_text_file(dir / "syntax.json", "{");
  CHECK(cli({"gen-data", "--config", (dir / "syntax.json").string(), "--out", (dir / "d").string()}).code == 2);
  CHECK(cli({"run", "--data", (dir / "missing").string(), "--out", (dir / "r").string()}).code == 2);
  CHECK(cli({"report", "--runs", (dir / "missing").string(), "--out", (dir / "r").string()}).code == 2);
}

TEST_CASE("runtime failures exit with 1") {
  const fs::path dir = scratch("runtime");
  const fs::path cfg = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", cfg.string(), "--out", (dir / "data").string()}).code == 0);
  auto bytes = read_binary_file(dir / "data" / "masks.bin");
  bytes.pop_back();
  write_binary_file(dir / "data" / "masks.bin", bytes);
  const Outcome o = cli({"run", "--config", cfg.string(), "--data", (dir / "data").string(), "--out",
                         (dir / "run").string()});
  CHECK(o.code == 1);
  CHECK(error_json(o)["error"] == "FormatError");
}

TEST_CASE("command-line seed overrides the config and is recorded") {
  const fs::path dir = scratch("seed");
  const fs::path cfg = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", cfg.string(), "--out", (dir / "a").string(), "--seed", "99"}).code == 0);
  const auto echoed = nlohmann::json::parse(read_text_file(dir / "a" / "config.json"));
  CHECK(echoed["seed"] == 99);
  CHECK(echoed["train"]["epochs"] == 2);
  CHECK(echoed["train"].contains("learning_rate"));
  const auto meta = nlohmann::json::parse(read_text_file(dir / "a" / "meta.json"));
  CHECK(meta["seed"] == 99);
  CHECK(meta["n_images"] == 50);
}

TEST_CASE("full pipeline produces every artifact and replays byte for byte") {
  const fs::path dir = scratch("pipeline");
  const fs::path cfg = tiny_config(dir);
  const std::string c = cfg.string();
  for (const char* tag : {"1", "2"}) {
    const fs::path root = dir / tag;
    REQUIRE(cli({"gen-data", "--config", c, "--out", (root / "data").string()}).code == 0);
    REQUIRE(cli({"pretrain", "--config", c, "--data", (root / "data").string(), "--out", (root / "pre").string()})
                .code == 0);
    REQUIRE(cli({"run", "--config", c, "--data", (root / "data").string(), "--init",
                 (root / "pre" / "params.bin").string(), "--init-mode", "contrastive", "--out",
                 (root / "run_c").string(), "--threads", tag})
                .code == 0);
    REQUIRE(cli({"run", "--config", c, "--data", (root / "data").string(), "--out", (root / "run_n").string(),
                 "--strategy", "entropy"})
                .code == 0);
    REQUIRE(cli({"report", "--runs", (root / "run_c").string(), (root / "run_n").string(), "--out",
                 (root / "report").string()})
                .code == 0);
  }
  const fs::path a = dir / "1";
  for (const char* f : {"data/meta.json", "data/images.bin", "data/masks.bin", "data/config.json", "pre/params.bin",
                        "pre/pretrain_loss.csv", "pre/config.json", "run_c/curve.csv", "run_c/summary.json",
                        "run_c/timing.csv", "run_c/config.json", "run_n/curve.csv", "report/comparison.csv",
                        "report/learning_curves.csv"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
  }
  CHECK(fs::exists(a / "run_c" / "selection" / "rareness_aware" / "seed5" / "selection_cycle1.json"));
  CHECK(fs::exists(a / "run_n" / "selection" / "entropy" / "seed6" / "selection_cycle0.json"));
  for (const char* f : {"data/images.bin", "pre/params.bin", "run_c/curve.csv", "run_c/summary.json",
                        "run_n/curve.csv"}) {
    INFO(f);
    CHECK(read_binary_file(a / f) == read_binary_file(dir / "2" / f));
  }
  const std::string curves = read_text_file(a / "report" / "learning_curves.csv");
  CHECK(curves.rfind("series,strategy,init_mode,labels,mean_miou,std_miou,lower,upper\n", 0) == 0);
  CHECK(curves.find("contrastive_random") != std::string::npos);
  CHECK(curves.find("none_entropy") != std::string::npos);
  const auto params = read_binary_file(a / "pre" / "params.bin");
  CHECK(std::string(params.begin(), params.begin() + 5) == "ALNP1");
}
