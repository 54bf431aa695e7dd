#include "gradlab/rng.hpp"

#include <cmath>
#include <numbers>

namespace gradlab {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t rng_next_u64(RngState& state) {
  std::uint64_t word = mix(mix(state.seed + kGolden) + state.counter * kGolden);
  state.counter += 1;
  return word;
}

std::pair<double, RngState> rng_uniform(RngState state, double lo, double hi) {
  if (!(lo < hi)) {
    throw DomainError("rng_uniform: empty interval [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + ")");
  }
  std::uint64_t word = rng_next_u64(state);
  double u = static_cast<double>(word >> 11) * 0x1p-53;  // [0, 1)
  return {lo + u * (hi - lo), state};
}

double draw_uniform(RngState& state, double lo, double hi) {
  auto [value, next] = rng_uniform(state, lo, hi);
  state = next;
  return value;
}

double draw_normal(RngState& state) {
  // (0, 1] for the log argument
  double u1 = static_cast<double>((rng_next_u64(state) >> 11) + 1) * 0x1p-53;
  double u2 = static_cast<double>(rng_next_u64(state) >> 11) * 0x1p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t draw_below(RngState& state, std::uint64_t n) {
  if (n == 0) throw DomainError("draw_below: n must be positive");
  unsigned __int128 wide = static_cast<unsigned __int128>(rng_next_u64(state));
  return static_cast<std::uint64_t>((wide * n) >> 64);
}

}  // namespace gradlab
