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


#include <cmath>
#include <numeric>
#include <vector>

#include "alseg/core.hpp"
#include "doctest.h"

using namespace alseg;

namespace {

std::vector<float> random_vector(Rng& rng, std::size_t n, double scale) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

}  // namespace

TEST_CASE("softmax examples") {
  const std::vector<float> zeros{0, 0, 0, 0};
  const ClassDistribution uniform = softmax(zeros);
  for (double p : uniform.probs()) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));

  const std::vector<float> big{1000, 1000};
  const ClassDistribution d = softmax(big);
  CHECK(d[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(0.5).epsilon(1e-12));

  const std::vector<float> ln2{static_cast<float>(std::log(2.0)), 0.0f};
  const ClassDistribution t = softmax(ln2);
  CHECK(std::abs(t[0] - 2.0 / 3.0) < 1e-6);
  CHECK(std::abs(t[1] - 1.0 / 3.0) < 1e-6);

  CHECK_THROWS_AS(softmax(std::vector<float>{}), ArgumentError);
}

TEST_CASE("softmax is shift invariant and normalised") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    std::vector<float> v = random_vector(rng, n, 3.0);
    const float shift = static_cast<float>(rng.uniform(-50.0, 50.0));
    std::vector<float> s(v);
    for (float& x : s) x += shift;
    const ClassDistribution a = softmax(v), b = softmax(s);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(a[i] - b[i]) < 1e-6);
      CHECK(a[i] > 0.0);
      sum += a[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
    const double h = entropy(a);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST_CASE("entropy examples") {
  CHECK(entropy(ClassDistribution({1, 0, 0, 0})) == 0.0);
  CHECK(std::abs(entropy(ClassDistribution({0.25, 0.25, 0.25, 0.25})) - 1.386294) < 1e-6);
  CHECK(std::abs(entropy(ClassDistribution({0.5, 0.5, 0, 0})) - 0.693147) < 1e-6);
  const std::vector<float> f{0.5f, 0.5f, 0.0f, 0.0f};
  CHECK(std::abs(entropy(f) - std::log(2.0)) < 1e-7);
}

TEST_CASE("class distribution rejects invalid entries") {
  CHECK_THROWS_AS(ClassDistribution(std::vector<double>{}), ArgumentError);
  CHECK_THROWS_AS(ClassDistribution({0.5, 0.6}), ArgumentError);
  CHECK_THROWS_AS(ClassDistribution({1.5, -0.5}), ArgumentError);
}

TEST_CASE("l2 distance examples and metric properties") {
  const std::vector<float> a{1.5f, -2.0f};
  CHECK(l2_distance(a, a) == 0.0);
  CHECK(l2_distance(std::vector<float>{0, 0}, std::vector<float>{3, 4}) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(std::abs(l2_distance(std::vector<float>{1, 1, 1}, std::vector<float>{0, 0, 0}) - 1.732051) < 1e-6);
  CHECK_THROWS_AS(l2_distance(std::vector<float>{1}, std::vector<float>{1, 2}), ArgumentError);

  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    const auto x = random_vector(rng, n, 1.0), y = random_vector(rng, n, 1.0), z = random_vector(rng, n, 1.0);
    CHECK(l2_distance(x, y) == l2_distance(y, x));
    CHECK(l2_distance(x, z) <= l2_distance(x, y) + l2_distance(y, z) + 1e-6);
    CHECK(l2_distance(x, y) > 0.0);
  }
}

TEST_CASE("argmax breaks ties towards the lowest index") {
  CHECK(argmax_tiebreak_low(std::span<const float>(std::vector<float>{0.1f, 0.9f, 0.0f})) == 1);
  CHECK(argmax_tiebreak_low(std::span<const float>(std::vector<float>{0.5f, 0.5f})) == 0);
  CHECK(argmax_tiebreak_low(std::span<const float>(std::vector<float>{3, 1, 3})) == 0);
  CHECK_THROWS_AS(argmax_tiebreak_low(std::span<const float>()), ArgumentError);
}

TEST_CASE("global average pool") {
  const Tensor constant({3, 2, 4}, 0.7f);
  for (float v : global_average_pool(constant)) CHECK(v == doctest::Approx(0.7f));

  const Tensor two({2, 1, 1}, std::vector<float>{1, 3});
  CHECK(global_average_pool(two) == std::vector<float>{2.0f});

  // HWC layout: pixel p holds (channel0, channel1).
  const Tensor map({2, 2, 2}, std::vector<float>{1, 0, 2, 0, 3, 0, 4, 8});
  CHECK(global_average_pool(map) == std::vector<float>{2.5f, 2.0f});

  CHECK_THROWS_AS(global_average_pool(Tensor({0, 2, 2})), ArgumentError);
}

TEST_CASE("tensor shape contract") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ArgumentError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  t[4] = std::nanf("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("rng streams replay and purposes diverge") {
  Rng a(42), b(42);
  for (int i = 0; i < 10000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  Rng s1 = Rng::for_purpose(42, purpose::kTrainShuffle), s2 = Rng::for_purpose(42, purpose::kAugment);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += s1.next_u64() == s2.next_u64();
  CHECK(same == 0);
  CHECK(Rng::for_purpose(42, purpose::kAugment) == Rng(42 ^ purpose::kAugment));
}

TEST_CASE("rng distributions") {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("parallel_for visits every index once for any thread count") {
  for (int threads : {1, 2, 8}) {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::accumulate(hits.begin(), hits.end(), 0) == 1000);
    CHECK(*std::min_element(hits.begin(), hits.end()) == 1);
  }
}
