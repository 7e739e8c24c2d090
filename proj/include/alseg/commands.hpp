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

#ifndef ALSEG_COMMANDS_HPP
#define ALSEG_COMMANDS_HPP

// The `alseg` command-line tool. Each command validates its inputs, writes
// only under its output directory and reports failure through an exception;
// run_cli maps those to exit codes (0 ok, 1 runtime failure, 2 usage or
// configuration error) and a one-line JSON error on stderr.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "alseg/config.hpp"

namespace alseg {

struct GenDataOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

struct PretrainOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

struct RunOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path data;
  std::optional<std::filesystem::path> init;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> init_mode;
  std::optional<std::string> strategy;
  int threads = 1;
};

struct ReportOptions {
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out;
};

/// Loads --config (or the defaults) and applies the --seed override.
RunConfig effective_config(const std::optional<std::filesystem::path>& path, std::optional<std::uint64_t> seed);

/// <out>/meta.json, images.bin, masks.bin, config.json
void cmd_gen_data(const GenDataOptions& options, std::ostream& log);
/// <out>/params.bin (pretrained encoder/decoder), pretrain_loss.csv, config.json
void cmd_pretrain(const PretrainOptions& options, std::ostream& log);
/// <out>/curve.csv, summary.json, timing.csv, selection/..., config.json
void cmd_run(const RunOptions& options, std::ostream& log);
/// <out>/comparison.csv, learning_curves.csv
void cmd_report(const ReportOptions& options, std::ostream& log);
/// Returns true iff every check passed.
bool cmd_selftest(const std::optional<std::filesystem::path>& scratch, std::ostream& log);

/// Parses argv and runs one subcommand. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace alseg

#endif  // ALSEG_COMMANDS_HPP
