#pragma once

#include <filesystem>
#include <vector>

#include "cof/audio/log_warp.hpp"
#include "cof/audio/resample.hpp"
#include "cof/audio/stft.hpp"
#include "cof/audio/wav.hpp"

namespace cof::audio {

// {0,1} grid in the warped domain.
struct BinaryMask {
  Tensor<double> values;  // [rows, frames]
  std::vector<double> warp_map;
  std::int64_t source_rows = 0;

  void validate() const {
    for (double v : values.values())
      if (v != 0.0 && v != 1.0) throw InvalidInput("binary mask holds a value outside {0,1}");
  }
  WarpedMagnitude as_warped() const {
    WarpedMagnitude w;
    w.mags = values;
    w.warp_map = warp_map;
    w.source_rows = source_rows;
    return w;
  }
};

// Reads a WAV file, averages channels to mono, resamples and (optionally)
// peak-normalises. Silent input is returned as-is.
inline Waveform load_audio(const std::filesystem::path& path, int target_rate = kSampleRate, bool normalize = true) {
  if (target_rate <= 0) throw InvalidInput("load_audio: target rate must be positive");
  const WavData raw = read_wav(path);
  if (raw.frames() == 0) throw InvalidInput("load_audio: " + path.string() + " has no samples");
  Waveform mono;
  mono.sample_rate = raw.sample_rate;
  mono.samples.resize(static_cast<std::size_t>(raw.frames()));
  for (std::int64_t i = 0; i < raw.frames(); ++i) {
    double s = 0;
    for (int c = 0; c < raw.channels; ++c) s += raw.interleaved[static_cast<std::size_t>(i * raw.channels + c)];
    mono.samples[static_cast<std::size_t>(i)] = s / raw.channels;
  }
  Waveform out = resample(mono, target_rate);
  if (out.samples.empty()) throw InvalidInput("load_audio: " + path.string() + " is too short to resample");
  const double peak = out.peak();
  if (normalize && peak > 0)
    for (double& v : out.samples) v /= peak;
  return out;
}

// Elementwise sum without renormalisation.
inline Waveform mix(const std::vector<Waveform>& sources) {
  if (sources.size() < 2) throw InvalidInput("mix: need at least two sources");
  Waveform out = sources.front();
  for (std::size_t k = 1; k < sources.size(); ++k) {
    const auto& s = sources[k];
    if (s.sample_rate != out.sample_rate) throw InvalidInput("mix: sample rates differ");
    if (s.samples.size() != out.samples.size()) throw InvalidInput("mix: lengths differ");
    for (std::size_t i = 0; i < s.samples.size(); ++i) out.samples[i] += s.samples[i];
  }
  return out;
}

// mask[f,t] = 1 iff component n is the strict maximum at (f,t); ties go to
// the lowest index.
inline BinaryMask dominant_mask(const std::vector<WarpedMagnitude>& comps, std::size_t n) {
  if (comps.empty()) throw InvalidInput("dominant_mask: empty component list");
  if (n >= comps.size()) throw InvalidInput("dominant_mask: source index out of range");
  const auto& shape = comps[0].mags.shape();
  for (auto& c : comps)
    if (c.mags.shape() != shape) throw InvalidInput("dominant_mask: component shapes differ");
  BinaryMask m;
  m.values = Tensor<double>(shape);
  m.warp_map = comps[0].warp_map;
  m.source_rows = comps[0].source_rows;
  const std::size_t P = m.values.size();
  for (std::size_t i = 0; i < P; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < comps.size(); ++k)
      if (comps[k].mags[i] > comps[best].mags[i]) best = k;
    m.values[i] = best == n ? 1.0 : 0.0;
  }
  return m;
}

// Unwarps a warped-domain mask (nearest row), applies it to the complex
// mixture keeping mixture phase, and inverts.
inline Waveform reconstruct(const BinaryMask& b, const ComplexSpectrogram& x_mix, std::int64_t length) {
  const Tensor<double> lin = unwarp(b.as_warped(), UnwarpMode::Nearest);
  if (lin.dim(0) != x_mix.freq_bins || lin.dim(1) != x_mix.frames)
    throw InternalError("reconstruct: unwarped mask " + shape_str(lin.shape()) + " does not match mixture [" +
                        std::to_string(x_mix.freq_bins) + "," + std::to_string(x_mix.frames) + "]");
  ComplexSpectrogram y = x_mix;
  for (std::size_t i = 0; i < y.bins.size(); ++i) y.bins[i] *= lin[i];
  return istft(y, length);
}

}  // namespace cof::audio
