#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cof/core/tensor.hpp"

namespace cof {

using Rng = std::mt19937_64;

// Stateless seed derivation (splitmix64) so per-iteration streams do not
// depend on how many draws earlier iterations made.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto step = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return step(step(step(a) ^ b) ^ c);
}

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  // 53-bit mantissa from the raw engine output; avoids distribution
  // implementation differences across standard libraries.
  const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return lo + (hi - lo) * u;
}

inline double normal(Rng& rng) {
  double u1 = uniform(rng);
  while (u1 <= 1e-300) u1 = uniform(rng);
  const double u2 = uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi_inclusive) {
  const auto span = static_cast<std::uint64_t>(hi_inclusive - lo) + 1;
  return lo + static_cast<std::int64_t>(uniform(rng) * static_cast<double>(span)) % static_cast<std::int64_t>(span);
}

template <class T>
Tensor<T> randn(Shape s, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(normal(rng) * stddev);
  return t;
}

template <class T>
Tensor<T> rand_uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, lo, hi));
  return t;
}

}  // namespace cof
