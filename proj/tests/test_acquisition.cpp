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


#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>

#include "alseg/acquisition.hpp"
#include "alseg/binary_io.hpp"
#include "alseg/verify.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace alseg;
namespace fs = std::filesystem;

namespace {

// H x 1 x C posterior map from explicit rows.
Tensor probs_map(const std::vector<std::vector<float>>& rows) {
  const std::size_t c = rows.front().size();
  Tensor t({rows.size(), 1, c});
  for (std::size_t p = 0; p < rows.size(); ++p) {
    for (std::size_t k = 0; k < c; ++k) t[p * c + k] = rows[p][k];
  }
  return t;
}

Tensor random_image(std::size_t h, std::size_t w, Rng& rng) {
  Tensor t({h, w, 1});
  for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

Dataset random_dataset(std::size_t n, std::size_t classes, Rng& rng) {
  Dataset ds;
  ds.height = ds.width = 8;
  for (std::size_t c = 0; c < classes; ++c) ds.class_names.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    ds.images.push_back(random_image(8, 8, rng));
    Mask m(64);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.below(classes));
    ds.masks.push_back(m);
    ds.train_indices.push_back(i);
  }
  return ds;
}

NetParams confident_model(std::size_t classes, std::uint64_t seed) {
  NetConfig c;
  c.n_classes = static_cast<std::uint32_t>(classes);
  NetParams p = init_params(c, seed);
  for (float& v : p.head_w.values()) v *= 4.0f;
  return p;
}

// Hand-built candidate terms over `n` images with 1-D embeddings.
CandidateTerms terms_1d(const std::vector<float>& positions) {
  CandidateTerms t;
  t.rareness.assign(positions.size(), 0.0);
  t.entropy.assign(positions.size(), 0.0);
  for (float x : positions) t.embeddings.push_back({x});
  return t;
}

AcquisitionConfig only(bool r, bool u, bool d) {
  AcquisitionConfig c;
  c.use_rareness = r;
  c.use_entropy = u;
  c.use_diversity = d;
  return c;
}

}  // namespace

TEST_CASE("pseudo labels") {
  const Tensor uniform = probs_map({{0.25f, 0.25f, 0.25f, 0.25f}, {0.5f, 0.5f, 0.0f, 0.0f}});
  CHECK(pseudo_labels_from_probs(uniform) == Mask{0, 0});
  const Tensor hot = probs_map({{0, 0, 1}, {0, 1, 0}, {1, 0, 0}});
  CHECK(pseudo_labels_from_probs(hot) == Mask{2, 1, 0});

  Rng rng(1);
  const NetParams model = confident_model(5, 1);
  for (int k = 0; k < 10; ++k) {
    const Tensor img = random_image(8, 8, rng);
    const Tensor p = predict(model, img);
    const Mask labels = pseudo_label_map(model, img);
    for (std::size_t px = 0; px < 64; ++px) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 5; ++c) {
        if (p[px * 5 + c] > p[px * 5 + best]) best = c;
      }
      REQUIRE(labels[px] == best);
    }
  }
}

TEST_CASE("class posterior") {
  NetParams zero = NetParams::zeros(NetConfig{});
  zero.head_b[0] = 1.0f;
  Rng rng(2);
  const Dataset ds = random_dataset(10, 5, rng);
  CHECK(class_posterior(zero, ds, ds.train_indices).probs() == std::vector<double>{1, 0, 0, 0, 0});

  CHECK(class_posterior_from_labels({Mask(16, 0), Mask(16, 1)}, 3).probs() == std::vector<double>{0.5, 0.5, 0});

  const NetParams model = confident_model(5, 2);
  std::vector<double> counts(5, 0.0);
  for (std::size_t i : ds.train_indices) {
    for (std::uint8_t c : pseudo_label_map(model, ds.images[i])) counts[c] += 1.0;
  }
  const ClassDistribution post = class_posterior(model, ds, ds.train_indices, 3);
  for (std::size_t c = 0; c < 5; ++c) CHECK(post[c] == doctest::Approx(counts[c] / 640.0).epsilon(1e-12));
}

TEST_CASE("rareness examples") {
  const ClassDistribution degenerate({1, 0, 0, 0});
  const Tensor class0 = probs_map({{0.7f, 0.1f, 0.1f, 0.1f}, {0.9f, 0.0f, 0.1f, 0.0f}});
  for (Aggregator a : {Aggregator::kMax, Aggregator::kMean}) {
    CHECK(std::abs(rareness_from_probs(class0, degenerate, a) - 0.367879) < 1e-6);
  }

  const Tensor with_rare = probs_map({{0.7f, 0.1f, 0.1f, 0.1f}, {0.1f, 0.1f, 0.8f, 0.0f}});
  CHECK(rareness_from_probs(with_rare, degenerate, Aggregator::kMax) == 1.0);

  const ClassDistribution skewed({0.98, 0.02});
  const Tensor half = probs_map({{0.9f, 0.1f}, {0.9f, 0.1f}, {0.2f, 0.8f}, {0.3f, 0.7f}});
  CHECK(std::abs(rareness_from_probs(half, skewed, Aggregator::kMax) - 0.980199) < 1e-6);
  CHECK(std::abs(rareness_from_probs(half, skewed, Aggregator::kMean) - 0.677755) < 1e-6);
}

TEST_CASE("rareness bounds and the max identity") {
  Rng rng(3);
  const Dataset ds = random_dataset(12, 4, rng);
  const NetParams model = confident_model(4, 3);
  const ClassDistribution post = class_posterior(model, ds, ds.train_indices);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Mask labels = pseudo_label_map(model, ds.images[i]);
    double min_p = 1.0;
    for (std::uint8_t c : labels) min_p = std::min(min_p, post[c]);
    const double r_max = rareness_image(model, ds.images[i], post, Aggregator::kMax);
    const double r_mean = rareness_image(model, ds.images[i], post, Aggregator::kMean);
    CHECK(r_max == doctest::Approx(std::exp(-min_p)).epsilon(1e-12));
    for (double r : {r_max, r_mean}) {
      CHECK(r >= std::exp(-1.0) - 1e-12);
      CHECK(r <= 1.0);
    }
    CHECK(r_mean <= r_max + 1e-12);
  }
  // Strictly decreasing in the posterior of the predicted class.
  const Tensor one = probs_map({{1.0f, 0.0f}});
  double previous = 2.0;
  for (double p : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const double r = rareness_from_probs(one, ClassDistribution({p, 1.0 - p}), Aggregator::kMax);
    CHECK(r < previous);
    previous = r;
  }
}

TEST_CASE("entropy examples") {
  const Tensor hot = probs_map({{1, 0, 0, 0}, {0, 0, 1, 0}});
  const Tensor flat = probs_map({{0.25f, 0.25f, 0.25f, 0.25f}, {0.25f, 0.25f, 0.25f, 0.25f}});
  const Tensor mixed = probs_map({{1, 0, 0, 0}, {0.25f, 0.25f, 0.25f, 0.25f}});
  for (Aggregator a : {Aggregator::kMax, Aggregator::kMean}) {
    CHECK(entropy_from_probs(hot, a) == 0.0);
    CHECK(std::abs(entropy_from_probs(flat, a) - std::log(4.0)) < 1e-6);
  }
  CHECK(std::abs(entropy_from_probs(mixed, Aggregator::kMax) - 1.386294) < 1e-6);
  CHECK(std::abs(entropy_from_probs(mixed, Aggregator::kMean) - 0.693147) < 1e-6);

  Rng rng(4);
  const NetParams model = confident_model(5, 4);
  for (int k = 0; k < 10; ++k) {
    const Tensor img = random_image(8, 8, rng);
    const double u = entropy_image(model, img, Aggregator::kMax);
    CHECK(u >= 0.0);
    CHECK(u <= std::log(5.0) + 1e-9);
  }
}

TEST_CASE("diversity") {
  const std::vector<float> q{3, 4};
  CHECK(diversity(q, {{0, 0}}) == doctest::Approx(5.0));
  CHECK(diversity(q, {{1, 1}, {3, 4}}) == 0.0);
  CHECK_THROWS_AS(diversity(q, {}), ContractError);

  Rng rng(5);
  std::vector<std::vector<float>> refs(5, std::vector<float>(6));
  for (auto& r : refs) {
    for (float& v : r) v = static_cast<float>(rng.normal());
  }
  for (int k = 0; k < 20; ++k) {
    std::vector<float> e(6);
    for (float& v : e) v = static_cast<float>(rng.normal());
    double best = 1e300;
    for (const auto& r : refs) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) s += (static_cast<double>(e[j]) - r[j]) * (static_cast<double>(e[j]) - r[j]);
      best = std::min(best, std::sqrt(s));
    }
    CHECK(diversity(e, refs) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("score sums the enabled terms") {
  CandidateTerms t = terms_1d({0.0f, 2.0f});
  t.rareness[1] = 0.5;
  t.entropy[1] = 1.0;
  PoolState pool = PoolState::create(2, {0}, {1});
  pool.set_embeddings(t.embeddings);
  const ScoreBreakdown all = score(1, t, pool, only(true, true, true));
  CHECK(all.r == 0.5);
  CHECK(all.u == 1.0);
  CHECK(all.d == 2.0);
  CHECK(all.total == 3.5);
  const ScoreBreakdown u = score(1, t, pool, only(false, true, false));
  CHECK(u.total == 1.0);
  CHECK(u.r == 0.0);
  CHECK(u.d == 0.0);
}

TEST_CASE("score from cached terms matches a direct recomputation") {
  Rng rng(6);
  const Dataset ds = random_dataset(10, 4, rng);
  const NetParams model = confident_model(4, 6);
  PoolState pool = PoolState::create(10, {0, 1}, {2, 3, 4, 5, 6, 7, 8, 9});
  for (Aggregator agg : {Aggregator::kMax, Aggregator::kMean}) {
    AcquisitionConfig cfg;
    cfg.aggregator = agg;
    const CandidateTerms terms = compute_candidate_terms(model, ds, pool, cfg, 2);
    REQUIRE(terms.posterior);
    pool.set_embeddings(terms.embeddings);
    for (std::size_t i : pool.unlabelled) {
      const ScoreBreakdown a = score(i, terms, pool, cfg);
      const ScoreBreakdown b = score(i, model, ds, *terms.posterior, pool, cfg);
      CHECK(a.r == doctest::Approx(rareness_image(model, ds.images[i], *terms.posterior, agg)).epsilon(1e-12));
      CHECK(a.u == doctest::Approx(entropy_image(model, ds.images[i], agg)).epsilon(1e-12));
      const std::vector<std::vector<float>> refs{image_embedding(model, ds.images[0]),
                                                 image_embedding(model, ds.images[1])};
      CHECK(a.d == doctest::Approx(diversity(image_embedding(model, ds.images[i]), refs)).epsilon(1e-9));
      CHECK(a.total == doctest::Approx(b.total).epsilon(1e-12));
    }
    const ScoreBreakdown e = score(3, terms, pool, only(false, true, false));
    CHECK(e.total == entropy_image(model, ds.images[3], agg));
  }
}

TEST_CASE("greedy selection on hand-built pools") {
  SUBCASE("diversity only is farthest-first") {
    const CandidateTerms t = terms_1d({0.0f, 1.0f, 10.0f});
    PoolState pool = PoolState::create(3, {0}, {1, 2});
    const Selection s = greedy_select(t, pool, only(false, false, true), 2);
    CHECK(s.picks == std::vector<std::size_t>{2, 1});
    CHECK(s.breakdowns[0].d == 10.0);
    CHECK(s.breakdowns[1].d == 1.0);
    CHECK(pool.labelled == std::vector<std::size_t>{0, 1, 2});
    CHECK(pool.unlabelled.empty());
  }
  SUBCASE("exhausting the pool takes all of it") {
    CandidateTerms t = terms_1d({0, 0, 0, 0, 0});
    t.entropy = {0, 0.3, 0.9, 0.1, 0.9};
    PoolState pool = PoolState::create(5, {0}, {1, 2, 3, 4});
    const Selection s = greedy_select(t, pool, only(false, true, false), 4);
    CHECK(s.picks == std::vector<std::size_t>{2, 4, 1, 3});
  }
  SUBCASE("ties go to the lowest index") {
    CandidateTerms t = terms_1d({0, 0, 0, 0});
    t.rareness = {1, 1, 1, 1};
    PoolState pool = PoolState::create(4, {}, {3, 1, 2});
    CHECK(greedy_select(t, pool, only(true, false, false), 1).picks == std::vector<std::size_t>{1});
  }
  SUBCASE("contract violations") {
    const CandidateTerms t = terms_1d({0, 1, 2});
    PoolState empty_ref = PoolState::create(3, {}, {0, 1, 2});
    CHECK_THROWS_AS(greedy_select(t, empty_ref, only(false, false, true), 1), ContractError);
    PoolState pool = PoolState::create(3, {0}, {1, 2});
    CHECK_THROWS_AS(greedy_select(t, pool, only(true, true, true), 3), ArgumentError);
    CHECK_THROWS_AS(only(false, false, false).validate(), ArgumentError);
  }
}

TEST_CASE("greedy selection equals the brute-force oracle") {
  const OracleReport r = check_greedy_oracle(50, 2024);
  CHECK(r.instances == 50);
  CHECK(r.mismatches == 0);
  CHECK(r.cache_mismatches == 0);
  CHECK(r.passed);
}

TEST_CASE("single-term greedy reduces to the baselines bit for bit") {
  const ReductionReport r = check_reductions(20, 2025);
  CHECK(r.pools == 20);
  CHECK(r.entropy_mismatches == 0);
  CHECK(r.coreset_mismatches == 0);

  const CandidateTerms t = terms_1d({0, 4, 5, 9, 2});
  PoolState pool = PoolState::create(5, {0}, {1, 2, 3, 4});
  CHECK(coreset_select(t.embeddings, pool, 3).picks == std::vector<std::size_t>{3, 1, 4});

  CandidateTerms e = terms_1d({0, 0, 0, 0, 0, 0});
  e.entropy = {0, 0.5, 0.7, 0.5, 0.7, 0.1};
  PoolState ep = PoolState::create(6, {0}, {1, 2, 3, 4, 5});
  CHECK(entropy_select(e, ep, 3).picks == std::vector<std::size_t>{2, 4, 1});
}

TEST_CASE("incremental distance cache against a recompute") {
  Rng rng(7);
  const std::size_t n = 30;
  std::vector<std::vector<float>> emb(n, std::vector<float>(4));
  for (auto& e : emb) {
    for (float& v : e) v = static_cast<float>(rng.normal());
  }
  std::vector<std::size_t> u;
  for (std::size_t i = 3; i < n; ++i) u.push_back(i);
  PoolState pool = PoolState::create(n, {0, 1, 2}, u);
  pool.set_embeddings(emb);
  for (std::size_t pick : {7, 20, 11, 4}) {
    pool.pick(pick);
    for (std::size_t i : pool.unlabelled) {
      double best = 1e300;
      for (const auto* refs : {&pool.labelled, &pool.selected}) {
        for (std::size_t j : *refs) best = std::min(best, l2_distance(emb[i], emb[j]));
      }
      REQUIRE(pool.min_dist[i] == best);
    }
  }
  CHECK(pool.selected == std::vector<std::size_t>{7, 20, 11, 4});
  pool.commit();
  CHECK(pool.selected.empty());
  CHECK(pool.labelled == std::vector<std::size_t>{0, 1, 2, 4, 7, 11, 20});
  CHECK_FALSE(pool.is_unlabelled(7));
  CHECK(pool.is_unlabelled(8));
  CHECK_THROWS_AS(PoolState::create(5, {1, 2}, {2, 3}), ArgumentError);
  CHECK_THROWS_AS(PoolState::create(5, {1}, {7}), ArgumentError);
}

TEST_CASE("random selection") {
  std::vector<std::size_t> u{2, 4, 6, 8, 10};
  PoolState all = PoolState::create(11, {0}, u);
  Rng rng(8);
  const Selection s = random_select(all, 5, rng);
  std::vector<std::size_t> sorted = s.picks;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == u);
  CHECK(s.breakdowns.empty());

  PoolState a = PoolState::create(11, {0}, u), b = PoolState::create(11, {0}, u);
  Rng ra(9), rb(9);
  CHECK(random_select(a, 3, ra).picks == random_select(b, 3, rb).picks);

  std::vector<int> counts(4, 0);
  Rng rc(10);
  for (int k = 0; k < 10000; ++k) {
    PoolState p = PoolState::create(4, {}, {0, 1, 2, 3});
    ++counts[random_select(p, 1, rc).picks[0]];
  }
  for (int c : counts) CHECK(std::abs(c / 10000.0 - 0.25) <= 0.02);

  PoolState small = PoolState::create(3, {}, {0, 1});
  CHECK_THROWS_AS(random_select(small, 3, rc), ArgumentError);
}

TEST_CASE("selection over cycles keeps batches disjoint and labelled sets growing") {
  Rng rng(11);
  const Dataset ds = random_dataset(24, 4, rng);
  const NetParams model = confident_model(4, 11);
  std::vector<std::size_t> u;
  for (std::size_t i = 4; i < 24; ++i) u.push_back(i);
  PoolState pool = PoolState::create(24, {0, 1, 2, 3}, u);
  std::set<std::size_t> seen(pool.labelled.begin(), pool.labelled.end());
  for (Strategy s : {Strategy::kRarenessAware, Strategy::kEntropy, Strategy::kCoreset, Strategy::kRandom}) {
    AcquisitionConfig cfg;
    cfg.strategy = s;
    const std::vector<std::size_t> before = pool.labelled;
    const Selection sel = select_batch(model, ds, pool, cfg, 4, rng);
    CHECK(sel.picks.size() == 4);
    for (std::size_t i : sel.picks) CHECK(seen.insert(i).second);
    CHECK(std::includes(pool.labelled.begin(), pool.labelled.end(), before.begin(), before.end()));
    CHECK(pool.labelled.size() == before.size() + 4);
    CHECK(pool.labelled.size() + pool.unlabelled.size() == 24);
  }
}

TEST_CASE("selection log") {
  const char* root = std::getenv("ALSEG_TEST_TMP");
  const fs::path dir = fs::path(root ? root : fs::temp_directory_path().string()) / "acquisition";
  fs::create_directories(dir);
  CandidateTerms t = terms_1d({0.0f, 2.0f, 5.0f});
  t.rareness = {0.4, 0.5, 0.6};
  t.entropy = {0.1, 1.0, 0.2};
  t.posterior = ClassDistribution({0.75, 0.25});
  PoolState pool = PoolState::create(3, {0}, {1, 2});
  const Selection sel = greedy_select(t, pool, AcquisitionConfig{}, 2);
  write_selection_log(dir / "selection_cycle1.json", 1, "rareness_aware", sel);
  const auto j = nlohmann::json::parse(read_text_file(dir / "selection_cycle1.json"));
  CHECK(j["cycle"] == 1);
  CHECK(j["strategy"] == "rareness_aware");
  REQUIRE(j["picks"].size() == 2);
  CHECK(j["picks"][0]["rank"] == 0);
  CHECK(j["picks"][0]["index"] == 2);
  CHECK(j["picks"][0]["d"].get<double>() == 5.0);
  CHECK(j["picks"][0]["total"].get<double>() == doctest::Approx(5.8));
  CHECK(j["picks"][1]["posterior"].size() == 2);
}
