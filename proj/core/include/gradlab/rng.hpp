#pragma once

#include <cstdint>
#include <utility>

#include "gradlab/errors.hpp"

namespace gradlab {

/// Counter-based pseudo-random state. The output word is a pure function of
/// (seed, counter), so identical states yield identical streams on every
/// platform and parallel substreams can be carved out of the counter space
/// without shared mutable state.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  /// Disjoint substream k: counters [(k+1)<<40, (k+2)<<40). The parent stream
  /// must stay below 2^40 draws for the partition to hold.
  RngState substream(std::uint64_t k) const {
    return RngState{seed, (k + 1) << 40};
  }

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Next raw 64-bit word; advances the counter by one.
std::uint64_t rng_next_u64(RngState& state);

/// Uniform draw in [lo, hi). Throws DomainError unless lo < hi.
std::pair<double, RngState> rng_uniform(RngState state, double lo, double hi);

/// Mutating convenience form of rng_uniform.
double draw_uniform(RngState& state, double lo, double hi);

/// Standard normal via Box-Muller; consumes two counter values.
double draw_normal(RngState& state);

/// Uniform integer in [0, n) by Lemire multiply-shift; n must be positive.
std::uint64_t draw_below(RngState& state, std::uint64_t n);

}  // namespace gradlab
