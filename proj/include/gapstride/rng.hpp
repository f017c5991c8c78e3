#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gapstride::rng {

// splitmix64; used to derive independent substreams from (seed, index).
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t index) { return mix(seed ^ mix(index + 1)); }

// Explicit draw helpers: std::mt19937_64 output is pinned by the standard,
// and these mappings avoid distribution objects whose sequences are not.
inline double uniform01(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& g, double lo, double hi) { return lo + (hi - lo) * uniform01(g); }

inline bool bernoulli(std::mt19937_64& g, double p) { return uniform01(g) < p; }

inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) { return n == 0 ? 0 : g() % n; }

// Box-Muller; one value per call, no cached spare, so the draw count per
// event is fixed.
inline double gaussian(std::mt19937_64& g, double mean = 0.0, double sd = 1.0) {
  double u1 = uniform01(g);
  const double u2 = uniform01(g);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(below(g, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace gapstride::rng
