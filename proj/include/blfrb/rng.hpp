#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace blfrb {

namespace detail {

/// SplitMix64 finalizer. Full-avalanche 64-bit mix.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic counter-based generator: the i-th output is a pure function
/// of (key, i). Streams for bags and replicas are derived by rekeying, so the
/// sequence consumed by one work unit never depends on scheduling order.
///
/// Seed derivation scheme (stable, documented contract):
///   child(tag, index) -> key' = mix(key ^ mix(tag) ^ mix(index))
/// with the fixed tags below. Identical (master seed, bag index, replica
/// index) always address the same stream regardless of thread count.
class Rng {
 public:
  // Stream tags for derived generators.
  static constexpr std::uint64_t kTagBag = 0x6261672d73656564ULL;      // "bag-seed"
  static constexpr std::uint64_t kTagReplica = 0x7265706c2d736565ULL;  // "repl-see"
  static constexpr std::uint64_t kTagData = 0x646174612d67656eULL;     // "data-gen"
  static constexpr std::uint64_t kTagFit = 0x6669742d63616e64ULL;      // "fit-cand"
  static constexpr std::uint64_t kTagContam = 0x636f6e74616d2e2eULL;   // "contam.."

  explicit Rng(std::uint64_t key) : key_(detail::mix64(key)), counter_(0) {}

  /// Derive an independent child stream addressed by (tag, index).
  Rng child(std::uint64_t tag, std::uint64_t index) const {
    return Rng(key_ ^ detail::mix64(tag) ^ detail::mix64(index));
  }

  static std::uint64_t derive_key(std::uint64_t master, std::uint64_t tag, std::uint64_t index) {
    return detail::mix64(master) ^ detail::mix64(tag) ^ detail::mix64(index);
  }

  std::uint64_t next_u64() { return detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform on [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, bound). Rejection-free modulo bias is negligible
  /// for bound << 2^64, but use Lemire reduction anyway.
  std::uint64_t next_below(std::uint64_t bound) {
    // Lemire's multiply-shift; one retry loop removes the bias entirely.
    while (true) {
      const std::uint64_t x = next_u64();
      const unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
      const std::uint64_t lo = static_cast<std::uint64_t>(m);
      if (lo >= bound || lo >= (-bound) % bound) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller. Consumes exactly two uniforms per draw
  /// (no cached spare), keeping each value a pure function of the counter.
  double next_gaussian() {
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Binomial(n, p) by inversion, with recursive halving of n so the
  /// inversion start value (1-p)^n never underflows. Exact distribution;
  /// cost O(n p + log n).
  std::uint64_t next_binomial(std::uint64_t n, double p) {
    if (n == 0 || p <= 0.0) return 0;
    if (p >= 1.0) return n;
    // Keep the expected count per leaf small enough for stable inversion.
    std::uint64_t total = 0;
    while (static_cast<double>(n) * p > 64.0 && n > 128) {
      const std::uint64_t half = n / 2;
      total += binv(half, p);
      n -= half;
    }
    return total + binv(n, p);
  }

  /// Multinomial(n, (1/b) 1_b) via b-1 sequential binomial conditionals.
  /// Counts sum to n exactly.
  std::vector<double> next_multinomial_uniform(std::uint64_t n, std::size_t b) {
    std::vector<double> counts(b, 0.0);
    std::uint64_t remaining = n;
    for (std::size_t i = 0; i + 1 < b && remaining > 0; ++i) {
      const double p = 1.0 / static_cast<double>(b - i);
      const std::uint64_t k = next_binomial(remaining, p);
      counts[i] = static_cast<double>(k);
      remaining -= k;
    }
    counts[b - 1] = static_cast<double>(remaining);
    return counts;
  }

 private:
  std::uint64_t binv(std::uint64_t n, double p) {
    // Standard inversion on the cdf; flip p > 1/2 to keep the start mass large.
    const bool flip = p > 0.5;
    const double q = flip ? 1.0 - p : p;
    const double ratio = q / (1.0 - q);
    double pmf = std::pow(1.0 - q, static_cast<double>(n));
    double cdf = pmf;
    double u = next_double();
    std::uint64_t k = 0;
    while (u > cdf && k < n) {
      ++k;
      pmf *= ratio * static_cast<double>(n - k + 1) / static_cast<double>(k);
      cdf += pmf;
    }
    return flip ? n - k : k;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace blfrb
