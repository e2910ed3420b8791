#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tas/common.hpp"

namespace tas {

// splitmix64 step. Used both as the stream generator and as the mixer for
// seed derivation so results do not depend on the platform's std::random
// distributions.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable per-component stream derivation: (master, name, index) -> seed.
inline uint64_t derive_seed(uint64_t master, const std::string& component, uint64_t index = 0) {
  uint64_t s = master ^ fnv1a64(component);
  splitmix64(s);
  s ^= index * 0x9e3779b97f4a7c15ULL;
  return splitmix64(s);
}

// Deterministic counter-free RNG stream.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1) with 53 bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; two uniform draws per normal, no caching so the draw count
  // per call is fixed.
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gaussian(double mean, double std) { return mean + std * gaussian(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    // modulo bias is negligible for n << 2^64
    return next_u64() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Pure function of (stream, a, b, c): one gaussian draw. Used for per-step
// observation noise so the value never depends on how many draws other
// components made.
inline double gaussian_at(uint64_t stream, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t s = stream;
  s ^= 0x9e3779b97f4a7c15ULL * (a + 1);
  splitmix64(s);
  s ^= 0xbf58476d1ce4e5b9ULL * (b + 1);
  splitmix64(s);
  s ^= 0x94d049bb133111ebULL * (c + 1);
  Rng r(splitmix64(s));
  return r.gaussian();
}

}  // namespace tas
