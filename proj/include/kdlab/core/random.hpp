// Copyright 2026 The kdlab Authors.
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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace kdlab {

// The std distributions are implementation-defined; everything that must be
// reproducible goes through the helpers below, which only consume raw
// mt19937_64 output.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream seed for (base seed, purpose tag, index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, tag, index));
}

/// Uniform in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return n == 0 ? 0 : rng() % n; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <typename T>
void shuffle(std::span<T> values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace kdlab
