#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace sslseg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random source. Every sampling algorithm is spelled out here
// (never delegated to std:: distributions, whose streams are
// implementation-defined), so a seed produces the same values on any build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform double in [0, 1), 53 significant bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  int uniform_int(int n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  // Uniform integer in [lo, hi], both ends included.
  int uniform_int(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

  // Box-Muller without caching: two uniforms per draw.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Poisson by summing exponential inter-arrival times. Exact for any rate;
  // cost grows linearly with the rate, which is fine at 8-bit pixel scale.
  int poisson(double rate) {
    if (rate <= 0.0) return 0;
    int k = 0;
    double acc = 0.0;
    for (;;) {
      double u = uniform();
      if (u <= 0.0) u = 0x1.0p-53;
      acc += -std::log(u);
      if (acc >= rate) return k;
      ++k;
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Stable stream derivation. Streams for distinct (seed, a, b, c) coordinates
// are independent of call order, which is what makes training reproducible
// regardless of batch composition or thread count.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                      std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x5353u);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return Rng(h);
}

}  // namespace sslseg
