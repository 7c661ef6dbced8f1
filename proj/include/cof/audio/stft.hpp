#pragma once

#include <complex>
#include <memory>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "cof/audio/waveform.hpp"
#include "cof/core/tensor.hpp"

namespace cof::audio {

// Complex time-frequency grid, frequency-major: bins[f * frames + t].
struct ComplexSpectrogram {
  std::vector<std::complex<double>> bins;
  std::int64_t freq_bins = 0;
  std::int64_t frames = 0;
  int window_size = kWindowSize;
  int hop = kHop;
  int sample_rate = kSampleRate;

  std::complex<double>& at(std::int64_t f, std::int64_t t) { return bins[static_cast<std::size_t>(f * frames + t)]; }
  const std::complex<double>& at(std::int64_t f, std::int64_t t) const {
    return bins[static_cast<std::size_t>(f * frames + t)];
  }

  void validate() const {
    if (window_size <= 0 || window_size % 2 != 0) throw InvalidInput("spectrogram window size must be positive and even");
    if (hop <= 0) throw InvalidInput("spectrogram hop must be positive");
    if (freq_bins != window_size / 2 + 1)
      throw InvalidInput("spectrogram has " + std::to_string(freq_bins) + " bins, window " +
                         std::to_string(window_size) + " implies " + std::to_string(window_size / 2 + 1));
    if (static_cast<std::int64_t>(bins.size()) != freq_bins * frames)
      throw InvalidInput("spectrogram storage does not match its dimensions");
  }

  // |X| as a [freq_bins, frames] grid.
  Tensor<double> magnitude() const {
    Tensor<double> m({freq_bins, frames});
    for (std::size_t i = 0; i < bins.size(); ++i) m[i] = std::abs(bins[i]);
    return m;
  }

  ComplexSpectrogram& operator+=(const ComplexSpectrogram& o) {
    if (o.freq_bins != freq_bins || o.frames != frames) throw InvalidInput("spectrogram shapes differ");
    for (std::size_t i = 0; i < bins.size(); ++i) bins[i] += o.bins[i];
    return *this;
  }
};

// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Owns an FFTW plan pair for one transform size. The planner is not
// thread-safe, so creation and destruction are serialised; execution with
// new-array calls is.
class FftPlan {
 public:
  explicit FftPlan(int n) : n_(n) {
    std::lock_guard lock(fftw_planner_mutex());
    real_ = fftw_alloc_real(static_cast<std::size_t>(n));
    cplx_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(n, real_, cplx_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, cplx_, real_, FFTW_ESTIMATE);
  }
  ~FftPlan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(cplx_);
  }
  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;

  int size() const { return n_; }
  double* real() { return real_; }
  fftw_complex* spectrum() { return cplx_; }
  void forward() { fftw_execute(fwd_); }
  void inverse() { fftw_execute(inv_); }  // unnormalised

 private:
  int n_;
  double* real_;
  fftw_complex* cplx_;
  fftw_plan fwd_, inv_;
};

// numpy-style "reflect" index (edge sample not repeated).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

inline std::int64_t stft_frames(std::int64_t length, int hop) { return length / hop + 1; }

// Centered STFT (reflect padding of window/2 on both sides), periodic Hann.
inline ComplexSpectrogram stft(const Waveform& w, int window_size = kWindowSize, int hop = kHop) {
  if (window_size <= 0 || window_size % 2 != 0) throw InvalidInput("stft: window size must be positive and even");
  if (hop <= 0) throw InvalidInput("stft: hop must be positive");
  const std::int64_t n = w.size();
  const std::int64_t pad = window_size / 2;
  if (n <= pad)
    throw InvalidInput("stft: input of " + std::to_string(n) + " samples is too short for window " +
                       std::to_string(window_size));
  ComplexSpectrogram s;
  s.window_size = window_size;
  s.hop = hop;
  s.sample_rate = w.sample_rate;
  s.freq_bins = window_size / 2 + 1;
  s.frames = stft_frames(n, hop);
  s.bins.assign(static_cast<std::size_t>(s.freq_bins * s.frames), {});
  const auto win = hann_window(window_size);
  detail::FftPlan plan(window_size);
  for (std::int64_t t = 0; t < s.frames; ++t) {
    const std::int64_t start = t * hop - pad;
    for (int i = 0; i < window_size; ++i) {
      const std::int64_t idx = detail::reflect_index(start + i, n);
      plan.real()[i] = w.samples[static_cast<std::size_t>(idx)] * win[static_cast<std::size_t>(i)];
    }
    plan.forward();
    for (std::int64_t f = 0; f < s.freq_bins; ++f) s.at(f, t) = {plan.spectrum()[f][0], plan.spectrum()[f][1]};
  }
  return s;
}

// Weighted overlap-add inverse of stft(), trimmed or zero-padded to `length`.
inline Waveform istft(const ComplexSpectrogram& s, std::int64_t length) {
  s.validate();
  if (length <= 0) throw InvalidInput("istft: length must be positive");
  const int n_fft = s.window_size;
  const std::int64_t pad = n_fft / 2;
  const std::int64_t full = n_fft + s.hop * (s.frames - 1);
  std::vector<double> acc(static_cast<std::size_t>(full), 0.0), norm(static_cast<std::size_t>(full), 0.0);
  const auto win = hann_window(n_fft);
  detail::FftPlan plan(n_fft);
  for (std::int64_t t = 0; t < s.frames; ++t) {
    for (std::int64_t f = 0; f < s.freq_bins; ++f) {
      plan.spectrum()[f][0] = s.at(f, t).real();
      plan.spectrum()[f][1] = s.at(f, t).imag();
    }
    plan.inverse();
    const std::int64_t start = t * s.hop;
    for (int i = 0; i < n_fft; ++i) {
      const double wv = win[static_cast<std::size_t>(i)];
      acc[static_cast<std::size_t>(start + i)] += plan.real()[i] / n_fft * wv;
      norm[static_cast<std::size_t>(start + i)] += wv * wv;
    }
  }
  Waveform out;
  out.sample_rate = s.sample_rate;
  out.samples.assign(static_cast<std::size_t>(length), 0.0);
  for (std::int64_t i = 0; i < length; ++i) {
    const std::int64_t j = i + pad;
    if (j >= full) break;
    const double nv = norm[static_cast<std::size_t>(j)];
    out.samples[static_cast<std::size_t>(i)] = nv > 1e-10 ? acc[static_cast<std::size_t>(j)] / nv : 0.0;
  }
  return out;
}

}  // namespace cof::audio
