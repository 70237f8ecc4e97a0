#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "todlab/common.hpp"

namespace todlab {

// xoroshiro128++ with splitmix64 seeding. All stochastic behaviour in the
// library flows through explicit Rng values; substreams are derived by name
// (stream) or by integer coordinates (fork) so that unrelated consumers of
// randomness never share a sequence. No <random> distributions are used:
// their output is implementation-defined and would break byte-for-byte
// reproducibility across standard libraries.
class Rng {
 public:
  static Rng seeded(std::uint64_t seed) {
    Rng r;
    std::uint64_t x = seed;
    r.s0_ = splitmix(x);
    r.s1_ = splitmix(x);
    r.fixup();
    return r;
  }

  // Child generator identified by a label, independent of siblings.
  Rng stream(std::string_view name) const {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return derive(h);
  }

  // Child generator identified by integer coordinates (epoch, example, ...).
  Rng fork(std::uint64_t a, std::uint64_t b = 0) const {
    std::uint64_t x = a;
    std::uint64_t h = splitmix(x) ^ (b + 0x9e3779b97f4a7c15ull);
    return derive(splitmix(h));
  }

  std::uint64_t u64() {
    const std::uint64_t r = rotl(s0_ + s1_, 17) + s0_;
    const std::uint64_t t = s1_ ^ s0_;
    s0_ = rotl(s0_, 49) ^ t ^ (t << 21);
    s1_ = rotl(t, 28);
    return r;
  }

  // Unbiased integer in [0, n). Lemire's method with rejection.
  std::uint64_t below(std::uint64_t n) {
    check(n > 0, "Rng::below: n must be positive");
    while (true) {
      const std::uint64_t x = u64();
      const unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
      const std::uint64_t lo = static_cast<std::uint64_t>(m);
      if (lo >= n || lo >= (0 - n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

  // Uniform in [0, 1) with 53 bits of precision.
  double real() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return real() < p; }

  // Standard normal via Box-Muller. Draws two uniforms per call and discards
  // the second variate; no hidden state, so call order alone fixes the output.
  double normal() {
    double u;
    do {
      u = real();
    } while (u <= 0.0);
    const double v = real();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586477 * v);
  }

 private:
  std::uint64_t s0_ = 0x853c49e6748fea9bull;
  std::uint64_t s1_ = 0xda3e39cb94b95bdbull;

  Rng derive(std::uint64_t h) const {
    std::uint64_t x = s0_ ^ h;
    Rng r;
    r.s0_ = splitmix(x);
    x ^= s1_;
    r.s1_ = splitmix(x);
    r.fixup();
    return r;
  }

  void fixup() {
    if (s0_ == 0 && s1_ == 0) s1_ = 0x9e3779b97f4a7c15ull;
  }

  static std::uint64_t splitmix(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
};

}  // namespace todlab
