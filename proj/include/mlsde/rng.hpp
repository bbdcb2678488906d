// Copyright 2026 The mlsde Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <limits>
#include <span>

#include <boost/random/normal_distribution.hpp>

namespace mlsde {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix_finalize(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives an independent sub-seed from (seed, index). Used to give every
/// chain, path, or training iteration its own stream so results do not
/// depend on how work is partitioned.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return detail::splitmix_finalize(
      detail::splitmix_finalize(seed + detail::kGolden) ^
      (index * 0xd1b54a32d192ed03ULL + 0x632be59bd9b4e019ULL));
}

/// Counter-based 64-bit generator: output k is a bijective mix of
/// key + k * golden. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(derive_seed(seed, stream)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return detail::splitmix_finalize(key_ + (++counter_) * detail::kGolden);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard normal draws. Boost's ziggurat is platform-independent, unlike
/// std::normal_distribution, so seeded outputs are reproducible everywhere.
inline double standard_normal(CounterRng& rng) {
  boost::random::normal_distribution<double> dist;
  return dist(rng);
}

inline void fill_standard_normal(CounterRng& rng, std::span<double> out) {
  for (double& v : out) v = standard_normal(rng);
}

inline double uniform01(CounterRng& rng) {
  // 53 random mantissa bits in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace mlsde
