#pragma once

// Counter-based random streams. A stream is (key, counter); every draw is a
// stateless hash of both, and child streams are derived by hashing the parent
// key with a label. Draw sequences therefore depend only on the seed and the
// derivation path, never on thread scheduling or evaluation order.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "common.hpp"

namespace repometrics::rng {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  Stream child(std::uint64_t id) const {
    return Stream(splitmix64(key_ ^ splitmix64(id ^ 0x632be59bd9b4e019ull)));
  }
  Stream child(std::string_view label) const { return child(fnv1a64(label)); }

  std::uint64_t next_u64() {
    return splitmix64(key_ ^ splitmix64(ctr_++ * 0xd1342543de82ef95ull + 1));
  }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // (0, 1]
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Uniform integer in [0, n) via multiply-shift; slight modulo-free bias is
  // immaterial here, determinism is what matters.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  // Marsaglia-Tsang; the shape < 1 case is boosted from shape + 1.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double chi_squared(double df) { return 2.0 * gamma(0.5 * df); }

  double exponential() { return -std::log(uniform_pos()); }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace repometrics::rng
