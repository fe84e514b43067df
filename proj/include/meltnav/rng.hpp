#pragma once

// Counter-based splittable random number generator.
//
// Every draw is a pure function of (key, counter), so streams are reproducible
// independently of call order, thread, or platform. Substreams are derived with
// split(), which never overlaps the parent stream. Gaussian draws use a
// two-uniform Box-Muller transform instead of std::normal_distribution, whose
// output is implementation-defined.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace meltnav {

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(mix(seed + kGolden)) {}

  // Derives an independent child stream. Children with distinct ids are
  // decorrelated from each other and from the parent.
  [[nodiscard]] CounterRng split(std::uint64_t stream_id) const {
    CounterRng child(0);
    child.key_ = mix(key_ ^ mix(stream_id + kSplitSalt));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  // Uniform on [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal. Consumes exactly two uniforms; no cached spare, so the
  // stream position is always a deterministic function of the call count.
  double next_gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift rejection-free mapping; bias is < 2^-64 * n, negligible
    // for the instance sizes drawn here and fully deterministic.
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kSplitSalt = 0xD6E8FEB86659FD93ull;

  // SplitMix64 finalizer: bijective avalanche mix.
  static constexpr std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace meltnav
