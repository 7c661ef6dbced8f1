#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "cof/core/ops.hpp"

namespace cof::vision {

// Approximate rank pooling weights for frames t = 1..T:
//   alpha_t = 2(T - t + 1) - (T + 1)(H_T - H_{t-1}),  H_t = sum_{i<=t} 1/i.
inline std::vector<double> dynamic_image_coefficients(int T) {
  if (T < 2) throw InvalidInput("dynamic image needs at least 2 frames, got " + std::to_string(T));
  std::vector<double> harmonic(static_cast<std::size_t>(T) + 1, 0.0);
  for (int i = 1; i <= T; ++i) harmonic[i] = harmonic[i - 1] + 1.0 / i;
  std::vector<double> a(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) a[t - 1] = 2.0 * (T - t + 1) - (T + 1) * (harmonic[T] - harmonic[t - 1]);
  return a;
}

// frames [B,3,T,H,W] -> [B,3,H,W], each channel min-max scaled to [0,1].
template <class T>
Var<T> dynamic_image(const Var<T>& frames) {
  if (frames.rank() != 5) throw InvalidInput("dynamic_image expects [B,C,T,H,W], got " + shape_str(frames.shape()));
  const auto c = dynamic_image_coefficients(static_cast<int>(frames.shape()[2]));
  // The weights sum to zero, so a static clip leaves only rounding residue.
  double peak = 0, mass = 0;
  for (auto v : frames.value().values()) peak = std::max(peak, std::abs(static_cast<double>(v)));
  for (auto a : c) mass += std::abs(a);
  const T floor = static_cast<T>(64 * std::numeric_limits<T>::epsilon() * mass * peak);
  return ops::minmax_normalize(ops::time_weighted_sum(frames, std::vector<T>(c.begin(), c.end())), floor);
}

}  // namespace cof::vision
