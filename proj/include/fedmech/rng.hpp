// Copyright 2026 The fedmech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "fedmech/numeric.hpp"

namespace fedmech {

// Every random draw in a simulation comes from a stream keyed by
// (seed, purpose, i, j, k). Streams are counter based: the n-th output is a
// pure function of the key and n, so no stream is ever shared or advanced by
// an unrelated consumer.
enum class StreamPurpose : std::uint64_t {
  kGradient = 1,
  kStrategy = 2,
  kReplication = 3,
  kMonteCarlo = 4,
  kData = 5,
  kProbe = 6,
};

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_key(std::uint64_t seed, StreamPurpose purpose, std::uint64_t i = 0,
                                   std::uint64_t j = 0, std::uint64_t k = 0) {
  std::uint64_t key = mix64(seed + kGoldenGamma);
  for (std::uint64_t part : {static_cast<std::uint64_t>(purpose), i, j, k}) {
    key = mix64(key ^ mix64(part + kGoldenGamma));
  }
  return key;
}

// Seed of the r-th replication of an experiment with base seed `seed`.
constexpr std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t r) {
  return derive_key(seed, StreamPurpose::kReplication, r);
}

class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t key) : key_(key) {}

  static RngStream make(std::uint64_t seed, StreamPurpose purpose, std::uint64_t i = 0,
                        std::uint64_t j = 0, std::uint64_t k = 0) {
    return RngStream(derive_key(seed, purpose, i, j, k));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix64(key_ + (++counter_) * kGoldenGamma); }

  double normal() { return normal_(*this); }

  double uniform(double lo, double hi) {
    // 53 random bits mapped onto [0, 1).
    const double u = static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  // Isotropic Gaussian vector with E||x||^2 = total_variance.
  ModelVector isotropic(Eigen::Index dim, double total_variance) {
    ModelVector out(dim);
    const double scale = std::sqrt(total_variance / static_cast<double>(dim));
    for (Eigen::Index k = 0; k < dim; ++k) out(k) = scale * normal();
    return out;
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace fedmech
