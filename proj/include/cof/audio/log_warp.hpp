#pragma once

#include <cmath>
#include <vector>

#include "cof/audio/waveform.hpp"
#include "cof/core/tensor.hpp"

namespace cof::audio {

// Magnitudes resampled onto a log-frequency axis. warp_map[i] is the
// (fractional) linear-frequency row sampled by output row i.
struct WarpedMagnitude {
  Tensor<double> mags;  // [rows, frames]
  std::vector<double> warp_map;
  std::int64_t source_rows = 0;

  std::int64_t rows() const { return mags.dim(0); }
  std::int64_t frames() const { return mags.dim(1); }
};

// Row positions 2^(lerp(0, log2(source_rows - 1), i / (out_rows - 1))):
// geometric from row 1 to the top row.
inline std::vector<double> log_warp_map(std::int64_t source_rows, std::int64_t out_rows) {
  if (source_rows < 2 || out_rows < 2) throw InvalidInput("log_warp: need at least 2 source and output rows");
  std::vector<double> m(static_cast<std::size_t>(out_rows));
  const double top = std::log2(static_cast<double>(source_rows - 1));
  for (std::int64_t i = 0; i < out_rows; ++i)
    m[static_cast<std::size_t>(i)] = std::exp2(top * static_cast<double>(i) / static_cast<double>(out_rows - 1));
  m.back() = static_cast<double>(source_rows - 1);
  return m;
}

// Linear interpolation along frequency. Output row 0 folds the DC row in by
// averaging input rows 0 and 1.
inline WarpedMagnitude log_warp(const Tensor<double>& mag, std::int64_t out_rows = kWarpedRows) {
  if (mag.rank() != 2) throw InvalidInput("log_warp: expects a [freq, frames] grid");
  const std::int64_t R = mag.dim(0), T = mag.dim(1);
  for (double v : mag.values())
    if (v < 0 || !std::isfinite(v)) throw InvalidInput("log_warp: magnitudes must be finite and non-negative");
  WarpedMagnitude w;
  w.source_rows = R;
  w.warp_map = log_warp_map(R, out_rows);
  w.mags = Tensor<double>({out_rows, T});
  for (std::int64_t i = 0; i < out_rows; ++i) {
    const double pos = w.warp_map[static_cast<std::size_t>(i)];
    const auto lo = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(pos)), R - 1);
    const std::int64_t hi = std::min<std::int64_t>(lo + 1, R - 1);
    const double frac = pos - static_cast<double>(lo);
    for (std::int64_t t = 0; t < T; ++t) {
      double v = (1 - frac) * mag.at(lo, t) + frac * mag.at(hi, t);
      if (i == 0) v = 0.5 * (mag.at(0, t) + mag.at(1, t));
      w.mags.at(i, t) = v;
    }
  }
  return w;
}

enum class UnwarpMode { Linear, Nearest };

// Inverse of log_warp back to source_rows. Nearest mode keeps binary masks
// binary. Rows below warp_map[0] take output row 0.
inline Tensor<double> unwarp(const WarpedMagnitude& w, UnwarpMode mode = UnwarpMode::Linear) {
  if (w.warp_map.empty() || w.source_rows < 2) throw InvalidInput("unwarp: missing warp map");
  if (static_cast<std::int64_t>(w.warp_map.size()) != w.rows())
    throw InvalidInput("unwarp: warp map length does not match grid rows");
  const std::int64_t R = w.source_rows, Q = w.rows(), T = w.frames();
  Tensor<double> out({R, T});
  std::int64_t j = 0;  // warp_map[j] <= r < warp_map[j+1]
  for (std::int64_t r = 0; r < R; ++r) {
    const double pos = static_cast<double>(r);
    while (j + 1 < Q && w.warp_map[static_cast<std::size_t>(j + 1)] <= pos) ++j;
    std::int64_t a = j, b = std::min(j + 1, Q - 1);
    double frac = 0;
    if (pos <= w.warp_map[0]) {
      a = b = 0;
    } else if (b != a) {
      const double x0 = w.warp_map[static_cast<std::size_t>(a)], x1 = w.warp_map[static_cast<std::size_t>(b)];
      frac = (pos - x0) / (x1 - x0);
    }
    if (mode == UnwarpMode::Nearest) {
      const std::int64_t k = frac > 0.5 ? b : a;
      for (std::int64_t t = 0; t < T; ++t) out.at(r, t) = w.mags.at(k, t);
    } else {
      for (std::int64_t t = 0; t < T; ++t) out.at(r, t) = (1 - frac) * w.mags.at(a, t) + frac * w.mags.at(b, t);
    }
  }
  return out;
}

// A grid sharing `like`'s warp map.
inline WarpedMagnitude with_warp_of(const WarpedMagnitude& like, Tensor<double> grid) {
  if (grid.shape() != like.mags.shape())
    throw ShapeMismatch("grid " + shape_str(grid.shape()) + " vs warped " + shape_str(like.mags.shape()));
  WarpedMagnitude w;
  w.mags = std::move(grid);
  w.warp_map = like.warp_map;
  w.source_rows = like.source_rows;
  return w;
}

}  // namespace cof::audio
