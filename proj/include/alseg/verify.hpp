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

#ifndef ALSEG_VERIFY_HPP
#define ALSEG_VERIFY_HPP

// Independent oracles: finite-difference gradient checks, a brute-force
// greedy selector, reduction identities and file-format round trips. Used
// by `alseg selftest` and the test suites.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alseg/acquisition.hpp"
#include "alseg/contrastive.hpp"
#include "alseg/datagen.hpp"
#include "alseg/model.hpp"

namespace alseg {

enum class Precision { kFloat32, kFloat64 };

/// float32: h = 1e-3, error < 1e-2. float64: h = 1e-5, error < 1e-4.
double fd_step(Precision p);
double fd_tolerance(Precision p);

/// |a - n| / max(|a|, |n|, floor). The floor keeps components whose true
/// value is ~0 from dividing round-off by round-off.
double relative_error(double analytic, double numeric, double floor);
double relative_error_floor(Precision p);

struct GroupError {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t components = 0;
};

/// Components whose stencil crossed a ReLU or pooling kink are skipped; a
/// check with more than this fraction skipped fails.
inline constexpr double kMaxSkippedFraction = 0.10;

struct GradCheckReport {
  std::size_t instances = 0;
  std::size_t components = 0;
  std::size_t skipped = 0;
  std::vector<GroupError> groups;  // worst case per group over all instances
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Random small network on a 4 x 4 input (weighted cross-entropy) checked
/// component by component against central differences.
GradCheckReport check_ce_gradients(std::size_t instances, std::uint64_t seed, Precision precision);

/// Same for InfoNCE through projection head, pooling and network, with 2B = 4
/// views of 4 x 4 inputs.
GradCheckReport check_info_nce_gradients(std::size_t instances, std::uint64_t seed, Precision precision);

// ---------------------------------------------------------------------------
// Selection oracles
// ---------------------------------------------------------------------------

/// A small random selection problem: images with random pixels and masks,
/// every image in the training split.
struct SelectionInstance {
  Dataset dataset;
  NetParams model;
  std::vector<std::size_t> labelled;
  std::vector<std::size_t> unlabelled;
  AcquisitionConfig config;
  std::size_t budget = 0;
};

/// |U| <= max_pool, K <= max_budget, random term toggles and aggregator.
SelectionInstance random_selection_instance(Rng& rng, std::size_t max_pool = 12, std::size_t max_budget = 4);

/// Greedy selection by exhaustion: each step re-scores every remaining image from
/// fresh predictions, with d recomputed against L u B from scratch.
std::vector<std::size_t> brute_force_greedy(const SelectionInstance& instance);

struct OracleReport {
  std::size_t instances = 0;
  std::size_t mismatches = 0;
  std::size_t cache_mismatches = 0;  // incremental min-distance vs recomputed
  bool passed = false;
};

OracleReport check_greedy_oracle(std::size_t instances, std::uint64_t seed);

struct ReductionReport {
  std::size_t pools = 0;
  std::size_t entropy_mismatches = 0;
  std::size_t coreset_mismatches = 0;
  bool passed = false;
};

/// greedy(entropy only) vs entropy_select and greedy(diversity only) vs
/// coreset_select: picks and scores compared bit for bit.
ReductionReport check_reductions(std::size_t pools, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Dataset, checkpoint, config and curve round trips in `scratch_dir`.
std::vector<CheckResult> check_formats(const std::filesystem::path& scratch_dir);

/// Everything above at CI scale.
std::vector<CheckResult> selftest(const std::filesystem::path& scratch_dir);

}  // namespace alseg

#endif  // ALSEG_VERIFY_HPP
