#pragma once

#include <cmath>
#include <cstdint>

#include "yuedesk/error.hpp"

namespace yuedesk {

// SplitMix64 generator with hand-rolled distributions. The std::*
// distributions are implementation-defined, so corpora and decode streams
// would not be byte-reproducible across toolchains if we used them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), unbiased via rejection.
  std::uint64_t uniform_below(std::uint64_t n) {
    if (n == 0) fail(ErrorCode::range, "uniform_below(0)");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) fail(ErrorCode::range, "uniform_int: lo > hi");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(uniform_below(span));
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Inversion method; fine for the modest lambdas used here.
  int poisson(double lambda) {
    if (!(lambda > 0.0)) fail(ErrorCode::range, "poisson: lambda must be positive");
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    int k = 0;
    const int cap = static_cast<int>(lambda * 8.0) + 64;
    while (u > cdf && k < cap) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

  bool bernoulli(double p) { return uniform() < p; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Independent child generator; used to give every song / worker its own
  // stream so parallel generation stays deterministic.
  Rng split(std::uint64_t stream) const { return Rng(mix(state_, stream)); }

 private:
  std::uint64_t state_;
};

}  // namespace yuedesk
