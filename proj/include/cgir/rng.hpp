#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cgir/common.hpp"

namespace cgir {

// splitmix64 finalizer, used both as an RNG seed scrambler and to derive
// independent child seeds from (seed, tag) pairs.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = mix64(seed ^ 0x6a09e667f3bcc909ull);
  s = mix64(s ^ mix64(a));
  s = mix64(s ^ mix64(b ^ 0xbb67ae8584caa73bull));
  s = mix64(s ^ mix64(c ^ 0x3c6ef372fe94f82bull));
  return s;
}

// FNV-1a, for deriving seed components from string tags.
inline uint64_t hash_tag(const std::string& tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic generator with a fixed bit-level contract: xoshiro256++ core,
// uniforms via the top-53-bit ladder, normals via Box-Muller with a cached
// second value. State serializes to text so streams can be checkpointed and
// resumed bit-exactly. Kept independent of std::mt19937 so the stream is
// stable across standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  void reseed(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) {
      s += 0x9e3779b97f4a7c15ull;
      w = mix64(s);
    }
    have_cached_ = false;
    cached_ = 0.0;
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  uint64_t below(uint64_t n) {
    check_param(n > 0, "Rng::below requires n > 0");
    // Rejection sampling keeps the draw unbiased.
    const uint64_t limit = ~uint64_t(0) - (~uint64_t(0) % n);
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // Box-Muller; u1 is kept away from zero so the log is finite.
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  void fill_normal(Scalar* dst, size_t n, double mean = 0.0, double stddev = 1.0) {
    for (size_t i = 0; i < n; ++i) dst[i] = mean + stddev * normal();
  }

  void fill_uniform(Scalar* dst, size_t n, double lo = 0.0, double hi = 1.0) {
    for (size_t i = 0; i < n; ++i) dst[i] = uniform(lo, hi);
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& text);

 private:
  uint64_t state_[4] = {};
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace cgir
