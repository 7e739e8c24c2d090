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

#ifndef ALSEG_EXPERIMENT_HPP
#define ALSEG_EXPERIMENT_HPP

// The active-learning loop: random first batch, then select -> reveal
// labels -> retrain from the initial weights -> evaluate, over several seeds
// and strategies.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alseg/acquisition.hpp"
#include "alseg/datagen.hpp"
#include "alseg/model.hpp"

namespace alseg {

struct IouResult {
  /// NaN for classes absent from both ground truth and prediction.
  std::vector<double> per_class;
  double miou = 0.0;
};

IouResult miou(const std::vector<Mask>& predictions, const std::vector<Mask>& ground_truth, std::size_t n_classes);

enum class InitMode { kNone, kContrastive };
std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string& s);

/// One row of an experiment: a display label plus the acquisition settings.
struct StrategyVariant {
  std::string label;
  AcquisitionConfig acquisition;
  friend bool operator==(const StrategyVariant&, const StrategyVariant&) = default;
};

struct ExperimentConfig {
  /// Cumulative labelled-image counts; budgets[0] is the random first batch.
  std::vector<std::size_t> budgets{20, 40, 60, 80, 100};
  /// Runs use seeds base, base + 1, ..., base + n_seeds - 1.
  std::uint32_t n_seeds = 5;
  InitMode init_mode = InitMode::kNone;
  std::vector<std::string> strategies{"rareness_aware"};
  /// "none", "terms" (entropy / +rareness / +feature / all) or
  /// "aggregators" (max / mean). Grids replace `strategies`.
  std::string grid = "none";
  /// Term toggles and aggregator used by the rareness_aware strategy.
  AcquisitionConfig acquisition;
  /// When false the wall_seconds column of curve.csv is written as 0 so the
  /// file is byte-reproducible; timings always go to timing.csv.
  bool record_wall_time = false;
  /// Number of test images exported as overlays for the final cycle of each
  /// run (0 disables).
  std::uint32_t overlay_images = 0;

  void validate() const;
  std::vector<StrategyVariant> variants() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct CycleResult {
  std::size_t cycle = 0;
  std::size_t labels = 0;
  std::vector<double> per_class_iou;
  double miou = 0.0;
  std::vector<std::size_t> selected;  // images added this cycle, pick order
  Selection selection;
  double wall_seconds = 0.0;
  std::vector<double> loss_history;
};

/// Everything a run needs besides the strategy and seed.
struct RunContext {
  const Dataset* dataset = nullptr;
  NetConfig net;
  TrainConfig train;  // seed is overwritten per cycle
  InitMode init_mode = InitMode::kNone;
  const NetParams* pretrained = nullptr;  // required for kContrastive
  std::vector<std::size_t> budgets;
};

/// Initial weights for a run: fresh He init, or the pretrained layers with a
/// fresh head.
NetParams initial_params(const RunContext& ctx, std::uint64_t seed);

/// Labelled set of cycle 0, shared by every strategy for the same seed.
std::vector<std::size_t> first_batch(const Dataset& dataset, std::size_t size, std::uint64_t seed);

std::vector<CycleResult> run_single(const RunContext& ctx, const StrategyVariant& strategy, std::uint64_t seed,
                                    int threads = 1, std::vector<NetParams>* cycle_params = nullptr);

struct RunRecord {
  std::string strategy;
  std::string init_mode;
  std::uint64_t seed = 0;
  std::vector<CycleResult> cycles;
};

struct SummaryRow {
  std::string strategy;
  std::string init_mode;
  std::size_t cycle = 0;
  std::size_t labels = 0;
  double mean_miou = 0.0;
  double std_miou = 0.0;  // sample std, 0 for one seed
  std::vector<double> mean_iou;  // per class, NaN entries skipped
  std::size_t n_seeds = 0;
};

/// Mean and sample standard deviation (n - 1); std is 0 for n == 1.
std::pair<double, double> mean_std(const std::vector<double>& values);

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& runs, std::size_t n_classes);

struct ExperimentOutput {
  std::vector<RunRecord> runs;
  std::vector<SummaryRow> summary;
};

/// Runs every (variant, seed) combination, in parallel across runs, and
/// writes curve.csv, summary.json, timing.csv and the selection logs under
/// `out_dir`.
ExperimentOutput run_experiment(const RunContext& ctx, const ExperimentConfig& config, std::uint64_t base_seed,
                                const std::filesystem::path& out_dir, int threads = 1);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

void write_curve_csv(const std::filesystem::path& path, const std::vector<RunRecord>& runs,
                     const std::vector<std::string>& class_names, bool record_wall_time);

struct CurveRow {
  std::string strategy;
  std::string init_mode;
  std::uint64_t seed = 0;
  std::size_t cycle = 0;
  std::size_t labels = 0;
  double miou = 0.0;
  std::vector<double> iou;
  double wall_seconds = 0.0;
};

struct CurveTable {
  std::vector<std::string> class_names;
  std::vector<CurveRow> rows;
};

CurveTable read_curve_csv(const std::filesystem::path& path);

/// Rebuilds run records (metrics only) from curve rows.
std::vector<RunRecord> runs_from_curve(const CurveTable& table);

void write_summary_json(const std::filesystem::path& path, const std::vector<SummaryRow>& summary,
                        const std::vector<std::string>& class_names);

/// %.9g, which round-trips every float exactly.
std::string format_real(double v);

// ---------------------------------------------------------------------------
// Overlays
// ---------------------------------------------------------------------------

struct Rgb {
  std::uint8_t r, g, b;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Fixed class palette; class c uses entry c.
const std::vector<Rgb>& class_palette();

/// Writes overlay_<index>.ppm for each image: a 3W x H P6 triptych of the
/// grayscale input, the ground truth and the prediction.
std::vector<std::filesystem::path> export_overlays(const NetParams& model, const Dataset& dataset,
                                                   const std::vector<std::size_t>& indices,
                                                   const std::filesystem::path& out_dir);

struct DecodedOverlay {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> gray;
  Mask ground_truth;
  Mask prediction;
};

/// Parses a triptych PPM and maps the palette panels back to class ids.
DecodedOverlay decode_overlay(const std::filesystem::path& path);

}  // namespace alseg

#endif  // ALSEG_EXPERIMENT_HPP
