#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace asurv {

// Deterministic random stream with explicit transforms.
//
// The mt19937_64 engine output is fixed by the standard, but the standard
// distributions are not, so every variate here is generated from raw 64-bit
// words. Substreams derived from (master seed, stream id) make per-subject
// and per-replication generation independent of thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

  // SplitMix64 finalizer; used to derive substream seeds.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  Rng substream(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  // Uniform on [0, 1).
  double u01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * u01(); }

  // Exp(1) via inversion; 1 - u01() lies in (0, 1].
  double exponential() { return -std::log1p(-u01()); }

  // Standard normal via Box-Muller, stateless across calls.
  double normal() {
    double u1 = 1.0 - u01();  // (0, 1]
    double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  std::mt19937_64 eng_;
  std::uint64_t seed_;
};

}  // namespace asurv
