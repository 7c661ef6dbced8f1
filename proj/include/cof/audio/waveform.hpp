#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <vector>

#include "cof/core/error.hpp"

namespace cof::audio {

// Canonical frontend constants.
inline constexpr int kSampleRate = 11025;
inline constexpr int kWindowSize = 1022;
inline constexpr int kHop = 256;
inline constexpr std::int64_t kCanonicalClip = 65280;  // (256 - 1) * 256 -> 256 frames
inline constexpr int kWarpedRows = 256;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  double peak() const {
    double p = 0;
    for (double v : samples) p = std::max(p, std::abs(v));
    return p;
  }
  bool silent() const { return peak() == 0.0; }

  void validate() const {
    if (sample_rate <= 0) throw InvalidInput("waveform sample rate must be positive");
    if (samples.empty()) throw InvalidInput("waveform is empty");
    for (double v : samples)
      if (!std::isfinite(v)) throw InvalidInput("waveform contains non-finite samples");
  }
};

inline double energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

// 10 log10(|ref|^2 / |ref - est|^2) over [begin, end).
inline double snr_db(const std::vector<double>& ref, const std::vector<double>& est, std::size_t begin = 0,
                     std::size_t end = static_cast<std::size_t>(-1)) {
  end = std::min({end, ref.size(), est.size()});
  double s = 0, n = 0;
  for (std::size_t i = begin; i < end; ++i) {
    s += ref[i] * ref[i];
    n += (ref[i] - est[i]) * (ref[i] - est[i]);
  }
  if (n == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(s / n);
}

}  // namespace cof::audio
