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

#ifndef ALSEG_CORE_HPP
#define ALSEG_CORE_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace alseg {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Bad argument to a public operation (wrong shape, empty input, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of a multi-step protocol was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed on-disk payload; `offset()` is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Well-formed payload whose contents are inconsistent.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Dense row-major array with a shape tag. Feature maps use H x W x C
/// (channel-last) layout throughout the library.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
  BasicTensor(std::vector<std::size_t> shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw ArgumentError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape product " +
                          std::to_string(element_count(shape_)));
    }
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  template <typename Other>
  BasicTensor<Other> cast() const {
    return BasicTensor<Other>(shape_, std::vector<Other>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<float>;

// ---------------------------------------------------------------------------
// Rng: splitmix64-seeded xoshiro256**
// ---------------------------------------------------------------------------

/// Purpose tags for sub-seeding: a stream for purpose P under run seed S is
/// `Rng(S ^ P)`.
namespace purpose {
inline constexpr std::uint64_t kDatasetSplit = 0x53504c4954000000ULL;   // "SPLIT"
inline constexpr std::uint64_t kNetInit = 0x4e4554494e495400ULL;        // "NETINIT"
inline constexpr std::uint64_t kHeadInit = 0x48454144494e4954ULL;       // "HEADINIT"
inline constexpr std::uint64_t kProjInit = 0x50524f4a494e4954ULL;       // "PROJINIT"
inline constexpr std::uint64_t kTrainShuffle = 0x53485546464c4500ULL;   // "SHUFFLE"
inline constexpr std::uint64_t kAugment = 0x4155474d454e5400ULL;        // "AUGMENT"
inline constexpr std::uint64_t kFirstBatch = 0x4649525354420000ULL;     // "FIRSTB"
inline constexpr std::uint64_t kRandomSelect = 0x52414e4453454c00ULL;   // "RANDSEL"
}  // namespace purpose

class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  static Rng for_purpose(std::uint64_t seed, std::uint64_t tag) { return Rng(seed ^ tag); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); unbiased (rejection).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t s_[4];
};

// ---------------------------------------------------------------------------
// Distributions and primitives
// ---------------------------------------------------------------------------

/// Non-negative vector summing to 1 (within 1e-6).
class ClassDistribution {
 public:
  ClassDistribution() = default;
  explicit ClassDistribution(std::vector<double> probs);

  const std::vector<double>& probs() const noexcept { return probs_; }
  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t c) const { return probs_[c]; }

  friend bool operator==(const ClassDistribution&, const ClassDistribution&) = default;

 private:
  std::vector<double> probs_;
};

ClassDistribution softmax(std::span<const float> logits);

/// Shannon entropy in nats, 0 log 0 == 0.
double entropy(const ClassDistribution& dist);
/// Same, on a raw probability row (e.g. one pixel of a ProbMap).
double entropy(std::span<const float> probs);

double l2_distance(std::span<const float> a, std::span<const float> b);

template <typename Real>
std::size_t argmax_tiebreak_low(std::span<const Real> values) {
  if (values.empty()) throw ArgumentError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

/// Mean over all H*W positions of an H x W x F map.
std::vector<float> global_average_pool(const Tensor& map);

// ---------------------------------------------------------------------------
// Threading
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// results into index-addressed slots so outcomes do not depend on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

template <typename Real>
bool BasicTensor<Real>::all_finite() const {
  for (Real v : data_) {
    if (!(v - v == Real(0))) return false;
  }
  return true;
}

}  // namespace alseg

#endif  // ALSEG_CORE_HPP
