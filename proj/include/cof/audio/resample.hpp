#pragma once

#include <cmath>
#include <vector>

#include "cof/audio/waveform.hpp"

namespace cof::audio {

// Band-limited resampling with a Blackman-windowed sinc kernel. The cutoff
// sits just below the lower of the two Nyquist rates.
inline Waveform resample(const Waveform& in, int target_rate, int zero_crossings = 24) {
  if (target_rate <= 0) throw InvalidInput("resample: target rate must be positive");
  if (in.sample_rate <= 0) throw InvalidInput("resample: source rate must be positive");
  if (in.sample_rate == target_rate) return in;
  const double ratio = static_cast<double>(target_rate) / in.sample_rate;
  const double cutoff = 0.97 * std::min(1.0, ratio);  // fraction of the source Nyquist
  const double half_width = zero_crossings / cutoff;  // in source samples
  const auto out_len = static_cast<std::int64_t>(std::floor(static_cast<double>(in.samples.size()) * ratio));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.assign(static_cast<std::size_t>(std::max<std::int64_t>(out_len, 0)), 0.0);
  const auto n = static_cast<std::int64_t>(in.samples.size());
  for (std::int64_t j = 0; j < out_len; ++j) {
    const double t = static_cast<double>(j) / ratio;
    const auto lo = static_cast<std::int64_t>(std::ceil(t - half_width));
    const auto hi = static_cast<std::int64_t>(std::floor(t + half_width));
    double acc = 0;
    for (std::int64_t i = std::max<std::int64_t>(lo, 0); i <= std::min(hi, n - 1); ++i) {
      const double x = t - static_cast<double>(i);
      const double arg = M_PI * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      const double u = x / half_width;  // in [-1, 1]
      const double win = 0.42 + 0.5 * std::cos(M_PI * u) + 0.08 * std::cos(2 * M_PI * u);
      acc += in.samples[static_cast<std::size_t>(i)] * cutoff * sinc * win;
    }
    out.samples[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

}  // namespace cof::audio
