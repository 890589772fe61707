// Copyright 2026  molex authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef MOLEX_RNG_HPP_
#define MOLEX_RNG_HPP_

#include <cstdint>

namespace molex {

// SplitMix64 stream. std::mt19937 plus the standard distributions would be
// implementation-defined; byte-exact checkpoints need every draw pinned down,
// so the generator and the normal transform are spelled out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two uniforms per pair.
  double normal();

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Independent child stream; stable in (state at fork time, tag).
  Rng fork(std::uint64_t tag) const {
    Rng mix(state_ ^ (0x94d049bb133111ebULL * (tag + 1)));
    mix.next_u64();
    return Rng(mix.state_);
  }

  std::uint64_t state() const { return state_; }
  static Rng from_state(std::uint64_t s) { return Rng(s); }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Per-item derived seed, used for parallel-safe dataset generation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace molex

#endif  // MOLEX_RNG_HPP_
