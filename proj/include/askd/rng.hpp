// SPDX-License-Identifier: Apache-2.0
//
// Self-contained seeded RNG (splitmix64 core). The standard <random>
// distributions are implementation-defined, so everything that must be
// bit-reproducible across builds goes through this instead.

#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace askd {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    // splitmix64 (Steele, Lea, Flood 2014)
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive. Modulo bias is irrelevant at
  // the ranges used here (vocab sizes, frame counts).
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1u;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller with a cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double two_pi = 6.283185307179586476925286766559;
    const double a = uniform();
    const double u = 1.0 - uniform();  // avoid log(0)
    const double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(two_pi * a);
    has_spare_ = true;
    return r * std::cos(two_pi * a);
  }

  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() <= 1) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i)));
      std::swap(v[i], v[j]);
    }
  }

  // Derives an independent stream seed from a base seed and salts.
  static uint64_t mix(uint64_t base, uint64_t salt_a, uint64_t salt_b = 0) {
    Rng r(base ^ (salt_a * 0x9e3779b97f4a7c15ull) ^ (salt_b * 0xc2b2ae3d27d4eb4full));
    r.next_u64();
    return r.next_u64();
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over a byte string; used for config hashes.
inline uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace askd
