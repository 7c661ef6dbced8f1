#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "cof/audio/frontend.hpp"
#include "cof/core/random.hpp"

using namespace cof;
using namespace cof::audio;

namespace {

Waveform sine(double freq, std::int64_t n, double amp = 1.0, int rate = kSampleRate) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2 * M_PI * freq * i / rate);
  return w;
}

Waveform noise(std::int64_t n, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(n));
  for (auto& v : w.samples) v = uniform(rng, -1, 1);
  return w;
}

double interior_snr(const Waveform& ref, const Waveform& est, int edge = kWindowSize) {
  return snr_db(ref.samples, est.samples, static_cast<std::size_t>(edge), ref.samples.size() - edge);
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("cof_test_" + name);
}

}  // namespace

TEST(Stft, CanonicalGridIs512By256) {
  auto s = stft(noise(kCanonicalClip, 1));
  EXPECT_EQ(s.freq_bins, 512);
  EXPECT_EQ(s.frames, 256);
}

TEST(Stft, BinCenteredSineConcentratesInOneRow) {
  const int bin = 40;
  const double f = static_cast<double>(bin) * kSampleRate / kWindowSize;
  auto mag = stft(sine(f, kCanonicalClip)).magnitude();
  double total = 0, near = 0;
  for (std::int64_t r = 0; r < mag.dim(0); ++r)
    for (std::int64_t t = 0; t < mag.dim(1); ++t) {
      const double e = mag.at(r, t) * mag.at(r, t);
      total += e;
      if (std::abs(r - bin) <= 1) near += e;
    }
  EXPECT_GE(near / total, 0.9);
}

TEST(Stft, ZeroWaveformGivesZeroGrid) {
  Waveform z;
  z.samples.assign(4096, 0.0);
  auto s = stft(z);
  for (auto& c : s.bins) EXPECT_EQ(std::abs(c), 0.0);
}

TEST(Stft, TooShortInputRejected) {
  Waveform w;
  w.samples.assign(100, 0.1);
  EXPECT_THROW(stft(w), InvalidInput);
}

TEST(Stft, MixIsLinearInTheSpectralDomain) {
  auto a = noise(20000, 3), b = sine(700, 20000, 0.5);
  auto sa = stft(a), sb = stft(b), sm = stft(mix({a, b}));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < sm.bins.size(); ++i) {
    num += std::norm(sm.bins[i] - sa.bins[i] - sb.bins[i]);
    den += std::norm(sm.bins[i]);
  }
  EXPECT_LE(std::sqrt(num / den), 1e-6);
}

TEST(Istft, WhiteNoiseRoundTripAbove40dB) {
  auto w = noise(kCanonicalClip, 11);
  auto back = istft(stft(w), w.size());
  EXPECT_GE(interior_snr(w, back), 40.0);
}

TEST(Istft, ZeroSpectrogramGivesSilence) {
  auto s = stft(noise(8000, 2));
  for (auto& c : s.bins) c = 0;
  auto w = istft(s, 8000);
  for (double v : w.samples) EXPECT_EQ(v, 0.0);
}

TEST(Istft, InconsistentMetadataRejected) {
  auto s = stft(noise(8000, 2));
  s.window_size = 1000;
  EXPECT_THROW(istft(s, 8000), InvalidInput);
}

TEST(LogWarp, ConstantsArePreserved) {
  Tensor<double> ones = Tensor<double>::ones({512, 16});
  auto w = log_warp(ones);
  ASSERT_EQ(w.rows(), 256);
  for (double v : w.mags.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(LogWarp, MapIsGeometricFromRowOneToTop) {
  auto m = log_warp_map(512, 256);
  EXPECT_DOUBLE_EQ(m.front(), 1.0);
  EXPECT_DOUBLE_EQ(m.back(), 511.0);
  for (std::size_t i = 1; i < m.size(); ++i) EXPECT_GT(m[i], m[i - 1]);
  const double ratio = m[1] / m[0];
  EXPECT_NEAR(m[100] / m[99], ratio, 1e-9);
}

TEST(LogWarp, TopImpulseLandsInLastRow) {
  Tensor<double> g({512, 4});
  for (int t = 0; t < 4; ++t) g.at(511, t) = 1.0;
  auto w = log_warp(g);
  for (int t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(w.mags.at(255, t), 1.0);
  double below = 0;
  for (int r = 0; r < 250; ++r) below += w.mags.at(r, 0);
  EXPECT_EQ(below, 0.0);
}

TEST(LogWarp, NegativeMagnitudeRejected) {
  Tensor<double> g({512, 2}, 1.0);
  g.at(3, 1) = -0.1;
  EXPECT_THROW(log_warp(g), InvalidInput);
}

TEST(LogWarp, UnwarpOfWarpIsCloseOnSmoothGrids) {
  // Gaussian-blurred noise along frequency (sigma 12 rows).
  Rng rng(5);
  const int R = 512, T = 32;
  Tensor<double> raw = rand_uniform<double>({R, T}, rng, 0, 1);
  Tensor<double> smooth({R, T});
  const double sigma = 12.0;
  for (int r = 0; r < R; ++r)
    for (int t = 0; t < T; ++t) {
      double acc = 0, wsum = 0;
      for (int k = std::max(0, r - 48); k < std::min(R, r + 49); ++k) {
        const double wk = std::exp(-0.5 * (k - r) * (k - r) / (sigma * sigma));
        acc += wk * raw.at(k, t);
        wsum += wk;
      }
      smooth.at(r, t) = acc / wsum;
    }
  auto back = unwarp(log_warp(smooth));
  double num = 0, den = 0;
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    num += (back[i] - smooth[i]) * (back[i] - smooth[i]);
    den += smooth[i] * smooth[i];
  }
  EXPECT_LE(std::sqrt(num / den), 0.05);
}

TEST(Unwarp, AllOnesMaskStaysOnes) {
  WarpedMagnitude w;
  w.mags = Tensor<double>::ones({256, 8});
  w.warp_map = log_warp_map(512, 256);
  w.source_rows = 512;
  auto lin = unwarp(w, UnwarpMode::Nearest);
  ASSERT_EQ(lin.dim(0), 512);
  for (double v : lin.values()) EXPECT_EQ(v, 1.0);
}

TEST(Unwarp, CheckerboardStaysBinaryWithNearest) {
  WarpedMagnitude w;
  w.mags = Tensor<double>({256, 8});
  for (int r = 0; r < 256; ++r)
    for (int t = 0; t < 8; ++t) w.mags.at(r, t) = (r + t) % 2;
  w.warp_map = log_warp_map(512, 256);
  w.source_rows = 512;
  for (double v : unwarp(w, UnwarpMode::Nearest).values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(Unwarp, MissingMapRejected) {
  WarpedMagnitude w;
  w.mags = Tensor<double>::ones({4, 4});
  EXPECT_THROW(unwarp(w), InvalidInput);
}

TEST(Mix, IdentityAndCancellation) {
  auto w = noise(1000, 9);
  Waveform z;
  z.samples.assign(1000, 0.0);
  EXPECT_EQ(mix({w, z}).samples, w.samples);
  Waveform neg = w;
  for (auto& v : neg.samples) v = -v;
  for (double v : mix({w, neg}).samples) EXPECT_EQ(v, 0.0);
}

TEST(Mix, MismatchRejected) {
  auto a = noise(1000, 1), b = noise(999, 2);
  EXPECT_THROW(mix({a, b}), InvalidInput);
  b = noise(1000, 2);
  b.sample_rate = 22050;
  EXPECT_THROW(mix({a, b}), InvalidInput);
  EXPECT_THROW(mix({a}), InvalidInput);
}

TEST(Mix, ThreeSinesShowThreeRows) {
  const std::vector<int> bins{30, 90, 200};
  std::vector<Waveform> parts;
  for (int b : bins) parts.push_back(sine(b * double(kSampleRate) / kWindowSize, 30000));
  auto mag = stft(mix(parts)).magnitude();
  std::vector<double> row_energy(512, 0.0);
  for (int r = 0; r < 512; ++r)
    for (int t = 0; t < mag.dim(1); ++t) row_energy[r] += mag.at(r, t);
  std::vector<int> idx(512);
  std::iota(idx.begin(), idx.end(), 0);
  // the three strongest local maxima are the three carriers
  std::vector<int> peaks;
  for (int r = 1; r < 511; ++r)
    if (row_energy[r] > row_energy[r - 1] && row_energy[r] >= row_energy[r + 1]) peaks.push_back(r);
  std::sort(peaks.begin(), peaks.end(), [&](int a, int b) { return row_energy[a] > row_energy[b]; });
  ASSERT_GE(peaks.size(), 3u);
  std::vector<int> top(peaks.begin(), peaks.begin() + 3);
  std::sort(top.begin(), top.end());
  EXPECT_EQ(top, bins);
}

namespace {
WarpedMagnitude grid(std::vector<double> v, std::int64_t rows, std::int64_t cols) {
  WarpedMagnitude w;
  w.mags = Tensor<double>({rows, cols}, std::move(v));
  w.warp_map = log_warp_map(2 * rows, rows);
  w.source_rows = 2 * rows;
  return w;
}
}  // namespace

TEST(DominantMask, DisjointSupportsAndTieRule) {
  auto a = grid({1, 0, 0, 0}, 2, 2);
  auto b = grid({0, 2, 0, 0}, 2, 2);
  auto m0 = dominant_mask({a, b}, 0), m1 = dominant_mask({a, b}, 1);
  EXPECT_EQ(m0.values.storage(), (std::vector<double>{1, 0, 1, 1}));
  EXPECT_EQ(m1.values.storage(), (std::vector<double>{0, 1, 0, 0}));
}

TEST(DominantMask, IdenticalComponentsGoToSourceZero) {
  auto a = grid({3, 1, 4, 1}, 2, 2);
  EXPECT_EQ(dominant_mask({a, a, a}, 0).values.storage(), (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(dominant_mask({a, a, a}, 2).values.storage(), (std::vector<double>{0, 0, 0, 0}));
}

TEST(DominantMask, MasksPartitionTheGrid) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int N = 2 + trial % 3;
    std::vector<WarpedMagnitude> comps;
    for (int n = 0; n < N; ++n) {
      auto t = rand_uniform<double>({6, 5}, rng);
      // force some exact ties
      for (std::size_t i = 0; i < t.size(); i += 7) t[i] = 0.5;
      comps.push_back(grid(t.storage(), 6, 5));
    }
    std::vector<double> total(30, 0.0);
    for (int n = 0; n < N; ++n) {
      auto m = dominant_mask(comps, static_cast<std::size_t>(n));
      m.validate();
      for (std::size_t i = 0; i < 30; ++i) total[i] += m.values[i];
    }
    for (double v : total) EXPECT_EQ(v, 1.0);
  }
}

TEST(DominantMask, EmptyListRejected) { EXPECT_THROW(dominant_mask({}, 0), InvalidInput); }

namespace {
BinaryMask constant_mask(double v) {
  BinaryMask b;
  b.values = Tensor<double>({256, 256}, v);
  b.warp_map = log_warp_map(512, 256);
  b.source_rows = 512;
  return b;
}
}  // namespace

TEST(Reconstruct, OnesMaskRecoversMixture) {
  auto m = mix({noise(kCanonicalClip, 21), sine(440, kCanonicalClip, 0.5)});
  auto back = reconstruct(constant_mask(1.0), stft(m), m.size());
  EXPECT_GE(interior_snr(m, back), 40.0);
}

TEST(Reconstruct, ZeroMaskGivesSilence) {
  auto m = noise(kCanonicalClip, 22);
  for (double v : reconstruct(constant_mask(0.0), stft(m), m.size()).samples) EXPECT_EQ(v, 0.0);
}

TEST(Reconstruct, IdealMaskSeparatesTwoSines) {
  auto a = sine(440, kCanonicalClip), b = sine(1500, kCanonicalClip, 0.8);
  auto m = mix({a, b});
  auto xa = log_warp(stft(a).magnitude()), xb = log_warp(stft(b).magnitude());
  auto xm = stft(m);
  auto ea = reconstruct(dominant_mask({xa, xb}, 0), xm, m.size());
  auto eb = reconstruct(dominant_mask({xa, xb}, 1), xm, m.size());
  EXPECT_GE(interior_snr(a, ea), 20.0);
  EXPECT_GE(interior_snr(b, eb), 20.0);
}

TEST(Reconstruct, ShapeMismatchIsInternalError) {
  auto m = noise(8000, 1);
  BinaryMask b;
  b.values = Tensor<double>::ones({64, 3});
  b.warp_map = log_warp_map(512, 64);
  b.source_rows = 512;
  EXPECT_THROW(reconstruct(b, stft(m), m.size()), InternalError);
}

TEST(Wav, StereoAt44kLoadsAsMonoAt11k) {
  auto path = temp_path("stereo.wav");
  // hand-write a stereo file: left = sine, right = same sine
  auto s = sine(440, 44100, 0.5, 44100);
  std::string bytes;
  auto put32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) bytes.push_back(char((v >> (8 * i)) & 0xff)); };
  auto put16 = [&](std::uint16_t v) { bytes.push_back(char(v & 0xff)); bytes.push_back(char(v >> 8)); };
  const std::uint32_t n = 44100;
  bytes += "RIFF";
  put32(36 + n * 4);
  bytes += "WAVEfmt ";
  put32(16); put16(1); put16(2); put32(44100); put32(44100 * 4); put16(4); put16(16);
  bytes += "data";
  put32(n * 4);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto v = static_cast<std::int16_t>(std::lround(s.samples[i] * 32767));
    put16(static_cast<std::uint16_t>(v));
    put16(static_cast<std::uint16_t>(v));
  }
  { std::ofstream f(path, std::ios::binary); f << bytes; }
  auto w = load_audio(path, 11025);
  EXPECT_EQ(w.sample_rate, 11025);
  EXPECT_NEAR(static_cast<double>(w.size()), 11025, 1);
  EXPECT_NEAR(w.peak(), 1.0, 1e-12);
  // still a 440 Hz tone
  auto ref = sine(440, w.size(), 1.0);
  EXPECT_GE(snr_db(ref.samples, w.samples, 200, w.samples.size() - 200), 25.0);
  std::filesystem::remove(path);
}

TEST(Wav, NativeRateMonoUnchangedUpToNormalisation) {
  auto path = temp_path("mono.wav");
  auto s = sine(300, 5000, 0.5);
  write_wav(path, s);
  auto w = load_audio(path);
  ASSERT_EQ(w.size(), 5000);
  double err = 0;
  for (std::size_t i = 0; i < 5000; ++i) err = std::max(err, std::abs(w.samples[i] * s.peak() - s.samples[i]));
  EXPECT_LE(err, 2.0 / 32767 + 1e-9);
  std::filesystem::remove(path);
}

TEST(Wav, SilentFilePassesThroughUnnormalised) {
  auto path = temp_path("silent.wav");
  Waveform z;
  z.samples.assign(2000, 0.0);
  write_wav(path, z);
  auto w = load_audio(path);
  EXPECT_TRUE(w.silent());
  EXPECT_EQ(w.size(), 2000);
  std::filesystem::remove(path);
}

TEST(Wav, EmptyAndMissingFilesFail) {
  auto path = temp_path("empty.wav");
  Waveform z;
  write_wav(path, z);
  EXPECT_THROW(load_audio(path), InvalidInput);
  std::filesystem::remove(path);
  EXPECT_THROW(load_audio(temp_path("does_not_exist.wav")), IoError);
}
