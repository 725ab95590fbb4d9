// Copyright (c) 2026 The pegrad Authors. All Rights Reserved.
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

namespace pegrad {

// Counter-based deterministic random source. The value stream is a pure
// function of (seed, stream, counter), so identical draw counts reproduce
// identical sequences across runs and platforms. A state is single-owner:
// concurrent draws from one state are forbidden.
struct RngState {
  uint64_t seed = 0;
  uint64_t stream = 0;
  uint64_t counter = 0;

  RngState() = default;
  RngState(uint64_t seed_, uint64_t stream_) : seed(seed_), stream(stream_) {}
};

// splitmix64 finalizer.
inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline uint64_t rng_value_at(uint64_t seed, uint64_t stream, uint64_t i) {
  constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  return mix64(mix64(seed + kGolden * (stream + 1)) + kGolden * (i + 1));
}

inline uint64_t rng_next_u64(RngState& s) {
  return rng_value_at(s.seed, s.stream, s.counter++);
}

// Uniform in (0, 1]; never returns 0 so it is safe under log().
inline double rng_next_unit_open(RngState& s) {
  return static_cast<double>((rng_next_u64(s) >> 11) + 1) * 0x1.0p-53;
}

// Uniform in [0, 1).
inline double rng_next_unit(RngState& s) {
  return static_cast<double>(rng_next_u64(s) >> 11) * 0x1.0p-53;
}

inline double rng_uniform(RngState& s, double lo, double hi) {
  return lo + (hi - lo) * rng_next_unit(s);
}

}  // namespace pegrad
