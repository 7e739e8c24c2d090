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

#include "alseg/acquisition.hpp"

#include <algorithm>
#include <cmath>

#include "alseg/binary_io.hpp"
#include "json.hpp"

namespace alseg {

std::string to_string(Aggregator a) { return a == Aggregator::kMax ? "max" : "mean"; }

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kRarenessAware: return "rareness_aware";
    case Strategy::kRandom: return "random";
    case Strategy::kEntropy: return "entropy";
    case Strategy::kCoreset: return "coreset";
  }
  return "?";
}

Aggregator aggregator_from_string(const std::string& s) {
  if (s == "max") return Aggregator::kMax;
  if (s == "mean") return Aggregator::kMean;
  throw ArgumentError("unknown aggregator '" + s + "' (expected max|mean)");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "rareness_aware") return Strategy::kRarenessAware;
  if (s == "random") return Strategy::kRandom;
  if (s == "entropy") return Strategy::kEntropy;
  if (s == "coreset") return Strategy::kCoreset;
  throw ArgumentError("unknown strategy '" + s + "' (expected rareness_aware|random|entropy|coreset)");
}

void AcquisitionConfig::validate() const {
  if (strategy == Strategy::kRarenessAware && !use_rareness && !use_entropy && !use_diversity) {
    throw ArgumentError("rareness_aware selection needs at least one enabled term");
  }
}

// ---------------------------------------------------------------------------
// PoolState
// ---------------------------------------------------------------------------

PoolState PoolState::create(std::size_t dataset_size, std::vector<std::size_t> labelled,
                            std::vector<std::size_t> unlabelled) {
  PoolState s;
  std::sort(labelled.begin(), labelled.end());
  std::sort(unlabelled.begin(), unlabelled.end());
  std::vector<int> seen(dataset_size, 0);
  for (const auto* list : {&labelled, &unlabelled}) {
    for (std::size_t i : *list) {
      if (i >= dataset_size) throw ArgumentError("pool index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw ArgumentError("pool index " + std::to_string(i) + " is both labelled and unlabelled");
    }
  }
  s.labelled = std::move(labelled);
  s.unlabelled = std::move(unlabelled);
  s.min_dist.assign(dataset_size, std::numeric_limits<double>::infinity());
  return s;
}

void PoolState::set_embeddings(std::vector<std::vector<float>> emb) {
  embeddings = std::move(emb);
  if (embeddings.size() != min_dist.size()) throw ArgumentError("embedding table does not cover the dataset");
  std::fill(min_dist.begin(), min_dist.end(), std::numeric_limits<double>::infinity());
  for (std::size_t i : unlabelled) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto* refs : {&labelled, &selected}) {
      for (std::size_t j : *refs) best = std::min(best, l2_distance(embeddings[i], embeddings[j]));
    }
    min_dist[i] = best;
  }
}

bool PoolState::is_unlabelled(std::size_t index) const {
  return std::binary_search(unlabelled.begin(), unlabelled.end(), index);
}

void PoolState::pick(std::size_t index) {
  auto it = std::lower_bound(unlabelled.begin(), unlabelled.end(), index);
  if (it == unlabelled.end() || *it != index) {
    throw ArgumentError("image " + std::to_string(index) + " is not in the unlabelled pool");
  }
  unlabelled.erase(it);
  selected.push_back(index);
  min_dist[index] = std::numeric_limits<double>::infinity();
  if (embeddings.empty()) return;
  for (std::size_t i : unlabelled) min_dist[i] = std::min(min_dist[i], l2_distance(embeddings[i], embeddings[index]));
}

void PoolState::commit() {
  labelled.insert(labelled.end(), selected.begin(), selected.end());
  std::sort(labelled.begin(), labelled.end());
  selected.clear();
}

// ---------------------------------------------------------------------------
// Terms
// ---------------------------------------------------------------------------

Mask pseudo_labels_from_probs(const Tensor& probs) {
  if (probs.rank() != 3 || probs.empty()) throw ArgumentError("probability map must be a non-empty H x W x C tensor");
  const std::size_t nc = probs.dim(2);
  Mask labels(probs.dim(0) * probs.dim(1));
  for (std::size_t p = 0; p < labels.size(); ++p) {
    labels[p] = static_cast<std::uint8_t>(argmax_tiebreak_low(probs.values().subspan(p * nc, nc)));
  }
  return labels;
}

Mask pseudo_label_map(const NetParams& model, const Tensor& image) {
  return pseudo_labels_from_probs(predict(model, image));
}

ClassDistribution class_posterior_from_labels(const std::vector<Mask>& labels, std::size_t n_classes) {
  if (labels.empty()) throw ArgumentError("class posterior needs at least one image");
  std::vector<std::uint64_t> counts(n_classes, 0);
  std::uint64_t total = 0;
  for (const Mask& m : labels) {
    for (std::uint8_t c : m) {
      if (c >= n_classes) throw ArgumentError("pseudo label out of range");
      ++counts[c];
    }
    total += m.size();
  }
  std::vector<double> probs(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) probs[c] = static_cast<double>(counts[c]) / static_cast<double>(total);
  return ClassDistribution(std::move(probs));
}

ClassDistribution class_posterior(const NetParams& model, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices, int threads) {
  std::vector<Mask> labels(indices.size());
  parallel_for(indices.size(), threads,
               [&](std::size_t k) { labels[k] = pseudo_label_map(model, dataset.images.at(indices[k])); });
  return class_posterior_from_labels(labels, model.config.n_classes);
}

namespace {

double rareness_from_labels(const Mask& labels, const ClassDistribution& posterior, Aggregator aggregator) {
  if (labels.empty()) throw ArgumentError("rareness of an empty image");
  double agg = aggregator == Aggregator::kMax ? -INFINITY : 0.0;
  for (std::uint8_t c : labels) {
    if (c >= posterior.size()) throw ArgumentError("pseudo label out of posterior range");
    const double r = std::exp(-posterior[c]);
    agg = aggregator == Aggregator::kMax ? std::max(agg, r) : agg + r;
  }
  return aggregator == Aggregator::kMax ? agg : agg / static_cast<double>(labels.size());
}

}  // namespace

double rareness_from_probs(const Tensor& probs, const ClassDistribution& posterior, Aggregator aggregator) {
  return rareness_from_labels(pseudo_labels_from_probs(probs), posterior, aggregator);
}

double rareness_image(const NetParams& model, const Tensor& image, const ClassDistribution& posterior,
                      Aggregator aggregator) {
  return rareness_from_probs(predict(model, image), posterior, aggregator);
}

double entropy_from_probs(const Tensor& probs, Aggregator aggregator) {
  if (probs.rank() != 3 || probs.empty()) throw ArgumentError("probability map must be a non-empty H x W x C tensor");
  const std::size_t nc = probs.dim(2);
  const std::size_t pixels = probs.dim(0) * probs.dim(1);
  double agg = aggregator == Aggregator::kMax ? -INFINITY : 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double u = entropy(probs.values().subspan(p * nc, nc));
    agg = aggregator == Aggregator::kMax ? std::max(agg, u) : agg + u;
  }
  return aggregator == Aggregator::kMax ? agg : agg / static_cast<double>(pixels);
}

double entropy_image(const NetParams& model, const Tensor& image, Aggregator aggregator) {
  return entropy_from_probs(predict(model, image), aggregator);
}

double diversity(std::span<const float> embedding, const std::vector<std::vector<float>>& references) {
  if (references.empty()) throw ContractError("diversity needs a non-empty reference set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : references) best = std::min(best, l2_distance(embedding, r));
  return best;
}

CandidateTerms compute_candidate_terms(const NetParams& model, const Dataset& dataset, const PoolState& pool,
                                       const AcquisitionConfig& config, int threads) {
  const std::size_t n = dataset.size();
  CandidateTerms terms;
  terms.rareness.assign(n, 0.0);
  terms.entropy.assign(n, 0.0);
  terms.embeddings.assign(n, {});

  // One forward pass per training image covers the posterior, the per-image
  // terms of U and the embeddings of L u U.
  const std::vector<std::size_t>& train = dataset.train_indices;
  std::vector<Mask> labels(train.size());
  parallel_for(train.size(), threads, [&](std::size_t k) {
    const std::size_t idx = train[k];
    const ForwardPass<float> fp = forward(model, dataset.images[idx]);
    if (config.use_rareness) labels[k] = pseudo_labels_from_probs(fp.probs);
    if (config.use_entropy) terms.entropy[idx] = entropy_from_probs(fp.probs, config.aggregator);
    if (config.use_diversity) terms.embeddings[idx] = global_average_pool(fp.decoder_features);
  });
  if (config.use_rareness) {
    terms.posterior = class_posterior_from_labels(labels, model.config.n_classes);
    for (std::size_t k = 0; k < train.size(); ++k) {
      terms.rareness[train[k]] = rareness_from_labels(labels[k], *terms.posterior, config.aggregator);
    }
  }
  // Pool members outside the training split (not expected in the protocol).
  for (const auto* list : {&pool.labelled, &pool.unlabelled}) {
    for (std::size_t idx : *list) {
      if (std::binary_search(train.begin(), train.end(), idx)) continue;
      const ForwardPass<float> fp = forward(model, dataset.images.at(idx));
      if (config.use_rareness) {
        terms.rareness[idx] = rareness_from_labels(pseudo_labels_from_probs(fp.probs), *terms.posterior,
                                                   config.aggregator);
      }
      if (config.use_entropy) terms.entropy[idx] = entropy_from_probs(fp.probs, config.aggregator);
      if (config.use_diversity) terms.embeddings[idx] = global_average_pool(fp.decoder_features);
    }
  }
  return terms;
}

ScoreBreakdown score(std::size_t index, const CandidateTerms& terms, const PoolState& pool,
                     const AcquisitionConfig& config) {
  ScoreBreakdown s;
  if (config.use_rareness) {
    s.r = terms.rareness.at(index);
    s.total += s.r;
  }
  if (config.use_entropy) {
    s.u = terms.entropy.at(index);
    s.total += s.u;
  }
  if (config.use_diversity) {
    if (pool.reference_count() == 0) {
      throw ContractError("diversity evaluated with an empty labelled set; the first cycle must be random");
    }
    s.d = pool.min_dist.at(index);
    s.total += s.d;
  }
  return s;
}

ScoreBreakdown score(std::size_t index, const NetParams& model, const Dataset& dataset,
                     const ClassDistribution& posterior, const PoolState& pool, const AcquisitionConfig& config) {
  if (!pool.is_unlabelled(index)) throw ArgumentError("score: image is not in the unlabelled pool");
  const ForwardPass<float> fp = forward(model, dataset.images.at(index));
  ScoreBreakdown s;
  if (config.use_rareness) {
    s.r = rareness_from_probs(fp.probs, posterior, config.aggregator);
    s.total += s.r;
  }
  if (config.use_entropy) {
    s.u = entropy_from_probs(fp.probs, config.aggregator);
    s.total += s.u;
  }
  if (config.use_diversity) {
    std::vector<std::vector<float>> refs;
    for (const auto* list : {&pool.labelled, &pool.selected}) {
      for (std::size_t j : *list) refs.push_back(image_embedding(model, dataset.images.at(j)));
    }
    s.d = diversity(global_average_pool(fp.decoder_features), refs);
    s.total += s.d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

namespace {

void check_budget(const PoolState& pool, std::size_t budget) {
  if (budget < 1) throw ArgumentError("selection budget must be >= 1");
  if (budget > pool.unlabelled.size()) {
    throw ArgumentError("selection budget " + std::to_string(budget) + " exceeds the unlabelled pool size " +
                        std::to_string(pool.unlabelled.size()));
  }
}

}  // namespace

Selection greedy_select(const CandidateTerms& terms, PoolState& pool, const AcquisitionConfig& config,
                        std::size_t budget) {
  config.validate();
  check_budget(pool, budget);
  if (config.use_diversity) {
    if (pool.reference_count() == 0) {
      throw ContractError("diversity evaluated with an empty labelled set; the first cycle must be random");
    }
    pool.set_embeddings(terms.embeddings);
  }
  Selection sel;
  sel.posterior = terms.posterior;
  for (std::size_t k = 0; k < budget; ++k) {
    std::size_t best = pool.unlabelled.front();
    ScoreBreakdown best_score = score(best, terms, pool, config);
    for (std::size_t i : pool.unlabelled) {
      const ScoreBreakdown s = score(i, terms, pool, config);
      if (s.total > best_score.total) {
        best = i;
        best_score = s;
      }
    }
    pool.pick(best);
    sel.picks.push_back(best);
    sel.breakdowns.push_back(best_score);
  }
  pool.commit();
  return sel;
}

Selection greedy_select(const NetParams& model, const Dataset& dataset, PoolState& pool,
                        const AcquisitionConfig& config, std::size_t budget, int threads) {
  check_budget(pool, budget);
  const CandidateTerms terms = compute_candidate_terms(model, dataset, pool, config, threads);
  return greedy_select(terms, pool, config, budget);
}

Selection random_select(PoolState& pool, std::size_t budget, Rng& rng) {
  check_budget(pool, budget);
  std::vector<std::size_t> candidates = pool.unlabelled;
  Selection sel;
  for (std::size_t k = 0; k < budget; ++k) {
    const std::size_t j = k + rng.below(candidates.size() - k);
    std::swap(candidates[k], candidates[j]);
    sel.picks.push_back(candidates[k]);
  }
  for (std::size_t idx : sel.picks) pool.pick(idx);
  pool.commit();
  return sel;
}

Selection entropy_select(const CandidateTerms& terms, PoolState& pool, std::size_t budget) {
  check_budget(pool, budget);
  std::vector<std::size_t> order = pool.unlabelled;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return terms.entropy.at(a) > terms.entropy.at(b); });
  Selection sel;
  for (std::size_t k = 0; k < budget; ++k) {
    const std::size_t idx = order[k];
    ScoreBreakdown s;
    s.u = terms.entropy[idx];
    s.total = s.u;
    sel.picks.push_back(idx);
    sel.breakdowns.push_back(s);
    pool.pick(idx);
  }
  pool.commit();
  return sel;
}

Selection coreset_select(const std::vector<std::vector<float>>& embeddings, PoolState& pool, std::size_t budget) {
  check_budget(pool, budget);
  if (pool.reference_count() == 0) throw ContractError("k-center selection needs a non-empty labelled set");
  std::vector<std::size_t> remaining = pool.unlabelled;
  std::vector<double> dist(remaining.size(), std::numeric_limits<double>::infinity());
  for (std::size_t a = 0; a < remaining.size(); ++a) {
    for (const auto* refs : {&pool.labelled, &pool.selected}) {
      for (std::size_t j : *refs) dist[a] = std::min(dist[a], l2_distance(embeddings.at(remaining[a]), embeddings[j]));
    }
  }
  Selection sel;
  for (std::size_t k = 0; k < budget; ++k) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < remaining.size(); ++a) {
      if (dist[a] > dist[best]) best = a;
    }
    const std::size_t chosen = remaining[best];
    ScoreBreakdown s;
    s.d = dist[best];
    s.total = s.d;
    sel.picks.push_back(chosen);
    sel.breakdowns.push_back(s);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
    dist.erase(dist.begin() + static_cast<std::ptrdiff_t>(best));
    for (std::size_t a = 0; a < remaining.size(); ++a) {
      dist[a] = std::min(dist[a], l2_distance(embeddings[remaining[a]], embeddings[chosen]));
    }
  }
  pool.embeddings = embeddings;
  for (std::size_t idx : sel.picks) pool.pick(idx);
  pool.commit();
  return sel;
}

Selection select_batch(const NetParams& model, const Dataset& dataset, PoolState& pool,
                       const AcquisitionConfig& config, std::size_t budget, Rng& rng, int threads) {
  switch (config.strategy) {
    case Strategy::kRandom: return random_select(pool, budget, rng);
    case Strategy::kEntropy: {
      AcquisitionConfig only{Strategy::kEntropy, false, true, false, config.aggregator};
      return entropy_select(compute_candidate_terms(model, dataset, pool, only, threads), pool, budget);
    }
    case Strategy::kCoreset: {
      AcquisitionConfig only{Strategy::kCoreset, false, false, true, config.aggregator};
      return coreset_select(compute_candidate_terms(model, dataset, pool, only, threads).embeddings, pool, budget);
    }
    case Strategy::kRarenessAware: return greedy_select(model, dataset, pool, config, budget, threads);
  }
  throw ArgumentError("unknown strategy");
}

void write_selection_log(const std::filesystem::path& path, std::size_t cycle, const std::string& strategy_name,
                         const Selection& selection) {
  using nlohmann::json;
  json posterior = selection.posterior ? json(selection.posterior->probs()) : json(nullptr);
  json picks = json::array();
  for (std::size_t k = 0; k < selection.picks.size(); ++k) {
    json entry;
    entry["rank"] = k;
    entry["index"] = selection.picks[k];
    if (k < selection.breakdowns.size()) {
      const ScoreBreakdown& s = selection.breakdowns[k];
      entry["r"] = s.r;
      entry["u"] = s.u;
      entry["d"] = s.d;
      entry["total"] = s.total;
    } else {
      entry["r"] = entry["u"] = entry["d"] = entry["total"] = nullptr;
    }
    entry["posterior"] = posterior;
    picks.push_back(std::move(entry));
  }
  json doc;
  doc["cycle"] = cycle;
  doc["strategy"] = strategy_name;
  doc["picks"] = std::move(picks);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, doc.dump(2) + "\n");
}

}  // namespace alseg
