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

#ifndef ALSEG_ACQUISITION_HPP
#define ALSEG_ACQUISITION_HPP

// Rareness-aware acquisition.
//
// For an unlabelled image I the score is
//
//   s(I) = r(I) + u(I) + d(I, L u B)
//
//   r(I) = aggr_x exp(-p(yhat(x)))       p(c): share of training pixels whose
//                                          pseudo label (argmax) is c
//   u(I) = aggr_x H(p(.|x))               per-pixel predictive entropy (nats)
//   d(I, S) = min_{J in S} |f_I - f_J|_2  f: pooled decoder features
//
// with aggr = max or mean. Terms are summed raw. Selection is greedy: pick
// the argmax, move it into B, refresh the cached min distances, repeat K
// times. Ties go to the lowest dataset index.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "alseg/core.hpp"
#include "alseg/datagen.hpp"
#include "alseg/model.hpp"

namespace alseg {

enum class Aggregator { kMax, kMean };
enum class Strategy { kRarenessAware, kRandom, kEntropy, kCoreset };

std::string to_string(Aggregator a);
std::string to_string(Strategy s);
Aggregator aggregator_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

struct AcquisitionConfig {
  Strategy strategy = Strategy::kRarenessAware;
  bool use_rareness = true;
  bool use_entropy = true;
  bool use_diversity = true;
  Aggregator aggregator = Aggregator::kMax;

  void validate() const;
  friend bool operator==(const AcquisitionConfig&, const AcquisitionConfig&) = default;
};

/// Per-image score terms. Disabled terms are 0 and excluded from `total`.
struct ScoreBreakdown {
  double r = 0.0;
  double u = 0.0;
  double d = 0.0;
  double total = 0.0;
};

/// Labelled / unlabelled bookkeeping for greedy selection. Per-image arrays
/// are indexed by dataset index.
struct PoolState {
  std::vector<std::size_t> labelled;    // L, ascending
  std::vector<std::size_t> unlabelled;  // U, ascending
  std::vector<std::size_t> selected;    // B of the current cycle, pick order
  std::vector<std::vector<float>> embeddings;
  /// min distance from each unlabelled image to L u B; +inf when L u B is
  /// empty or distances have not been initialised.
  std::vector<double> min_dist;

  static PoolState create(std::size_t dataset_size, std::vector<std::size_t> labelled,
                          std::vector<std::size_t> unlabelled);

  /// Sets embeddings and recomputes min_dist against L u B from scratch.
  void set_embeddings(std::vector<std::vector<float>> embeddings);
  /// Moves `index` from U to B and updates min_dist incrementally.
  void pick(std::size_t index);
  /// L <- L u B, B <- {}.
  void commit();

  bool is_unlabelled(std::size_t index) const;
  std::size_t reference_count() const { return labelled.size() + selected.size(); }
};

// ---------------------------------------------------------------------------
// Term computations
// ---------------------------------------------------------------------------

/// Per-pixel argmax with lowest-index ties.
Mask pseudo_labels_from_probs(const Tensor& probs);
Mask pseudo_label_map(const NetParams& model, const Tensor& image);

/// Fraction of pixels assigned to each class over all given label maps.
ClassDistribution class_posterior_from_labels(const std::vector<Mask>& labels, std::size_t n_classes);
/// Pseudo-label class shares over every pixel of `indices` (the whole
/// training split in the selection loop).
ClassDistribution class_posterior(const NetParams& model, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices, int threads = 1);

double rareness_from_probs(const Tensor& probs, const ClassDistribution& posterior, Aggregator aggregator);
double rareness_image(const NetParams& model, const Tensor& image, const ClassDistribution& posterior,
                      Aggregator aggregator);

double entropy_from_probs(const Tensor& probs, Aggregator aggregator);
double entropy_image(const NetParams& model, const Tensor& image, Aggregator aggregator);

/// min over references of l2_distance; ContractError on an empty reference set.
double diversity(std::span<const float> embedding, const std::vector<std::vector<float>>& references);

/// Terms needed for one selection round, indexed by dataset index. Entries
/// for images outside the pool are left empty/zero.
struct CandidateTerms {
  std::vector<double> rareness;
  std::vector<double> entropy;
  std::vector<std::vector<float>> embeddings;
  std::optional<ClassDistribution> posterior;
};

/// Runs the model once over the pool (and L, for embeddings) and gathers
/// whichever terms `config` needs.
CandidateTerms compute_candidate_terms(const NetParams& model, const Dataset& dataset, const PoolState& pool,
                                       const AcquisitionConfig& config, int threads = 1);

/// Combined score of one unlabelled image with d taken from the pool cache.
ScoreBreakdown score(std::size_t index, const CandidateTerms& terms, const PoolState& pool,
                     const AcquisitionConfig& config);

/// Same score computed straight from the model (used for audits and tests).
ScoreBreakdown score(std::size_t index, const NetParams& model, const Dataset& dataset,
                     const ClassDistribution& posterior, const PoolState& pool, const AcquisitionConfig& config);

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

struct Selection {
  std::vector<std::size_t> picks;          // B_t in pick order
  std::vector<ScoreBreakdown> breakdowns;  // score of each pick when chosen; empty for random
  std::optional<ClassDistribution> posterior;
};

/// Greedy maximisation of s(I) on precomputed terms. Moves the picks from U
/// into L on return.
Selection greedy_select(const CandidateTerms& terms, PoolState& pool, const AcquisitionConfig& config,
                        std::size_t budget);
Selection greedy_select(const NetParams& model, const Dataset& dataset, PoolState& pool,
                        const AcquisitionConfig& config, std::size_t budget, int threads = 1);

/// Uniform sample without replacement, in draw order.
Selection random_select(PoolState& pool, std::size_t budget, Rng& rng);

/// Top-K by u(I), lowest index first on ties.
Selection entropy_select(const CandidateTerms& terms, PoolState& pool, std::size_t budget);

/// Farthest-first (k-center greedy) on image embeddings.
Selection coreset_select(const std::vector<std::vector<float>>& embeddings, PoolState& pool, std::size_t budget);

/// Dispatches on `config.strategy`.
Selection select_batch(const NetParams& model, const Dataset& dataset, PoolState& pool,
                       const AcquisitionConfig& config, std::size_t budget, Rng& rng, int threads = 1);

/// selection_cycle<t>.json: one entry per pick with rank, index, r, u, d,
/// total and the class-posterior snapshot.
void write_selection_log(const std::filesystem::path& path, std::size_t cycle, const std::string& strategy_name,
                         const Selection& selection);

}  // namespace alseg

#endif  // ALSEG_ACQUISITION_HPP
