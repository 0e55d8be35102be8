#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "hpk/error.hpp"

namespace hpk {

// All randomness flows through mt19937_64 seeded from user-supplied
// integers. No std::distribution objects: their output is
// implementation-defined, so uniform/gumbel/shuffle are written out by
// hand to make results reproducible across standard libraries.
using Rng = std::mt19937_64;

// Mixes a seed with a stream index so derived generators (data vs init vs
// sampling, per-object streams, ...) are decorrelated even for adjacent
// seeds. This is the splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed, stream));
}

// Uniform in [0, 1): top 53 bits of one 64-bit draw.
inline double u01(Rng& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Uniform in (lo, hi) with the endpoints excluded; used where a later
// log() or log(-log()) must stay finite.
inline double u01_open(Rng& g) {
  double u = u01(g);
  if (u < 1e-12) u = 1e-12;
  if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
  return u;
}

inline double uniform(Rng& g, double lo, double hi) {
  return lo + (hi - lo) * u01(g);
}

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& g, std::uint64_t n) {
  if (n == 0) throw ParamError("uniform_index: n must be positive");
  std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
  std::uint64_t x;
  do {
    x = g();
  } while (x >= limit);
  return x % n;
}

inline int uniform_int(Rng& g, int lo, int hi) {
  if (hi < lo) throw ParamError("uniform_int: empty range");
  return lo + static_cast<int>(uniform_index(
                  g, static_cast<std::uint64_t>(hi - lo) + 1));
}

// Standard Gumbel(0,1) draw; the clamp keeps both logs finite.
inline double gumbel(Rng& g) { return -std::log(-std::log(u01_open(g))); }

// Standard normal via Box-Muller (one value per call, no cached spare).
inline double normal(Rng& g) {
  double u1 = u01_open(g);
  double u2 = u01(g);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename T>
void shuffle(Rng& g, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(g, i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace hpk
