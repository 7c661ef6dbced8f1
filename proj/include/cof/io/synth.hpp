#pragma once

// Synthetic audio-visual corpus: each category is one coloured shape that
// oscillates along a line, and its sound is a harmonic tone whose amplitude
// follows the shape's speed.

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "cof/audio/wav.hpp"
#include "cof/core/random.hpp"
#include "cof/io/manifest.hpp"
#include "cof/io/png.hpp"
#include "cof/io/tensor_file.hpp"

namespace cof::io {

enum class ShapeKind { Disc, Square, Triangle, Diamond, Ring, Cross, Bar, Star };

struct SynthCategory {
  std::string name;
  double carrier_hz;
  std::vector<double> harmonics;  // amplitude of partial h+1
  std::array<std::uint8_t, 3> color;
  ShapeKind shape;
  double period_s;   // oscillation period
  double angle_rad;  // direction of travel
  bool still = false;
};

struct SynthOptions {
  int fps = 8;
  double seconds = 6.0;
  int size = 224;
  int sample_rate = 11025;
  double test_fraction = 0.2;
  double val_fraction = 0.0;
  bool static_control = false;  // make the last category a motionless shape
  bool flows = true;
};

// Carrier table; the first two are 440 Hz and 660 Hz.
inline std::vector<SynthCategory> synth_categories(int n, bool static_control = false) {
  static const std::vector<SynthCategory> table = {
      {"disc", 440.0, {1.0, 0.5, 0.25}, {230, 60, 50}, ShapeKind::Disc, 2.0, 0.0},
      {"square", 660.0, {1.0, 0.2, 0.6}, {60, 200, 80}, ShapeKind::Square, 1.6, std::numbers::pi / 2},
      {"triangle", 330.0, {1.0, 0.7, 0.1, 0.3}, {70, 90, 235}, ShapeKind::Triangle, 2.4, std::numbers::pi / 4},
      {"diamond", 550.0, {1.0, 0.1, 0.4}, {240, 220, 60}, ShapeKind::Diamond, 1.3, 3 * std::numbers::pi / 4},
      {"ring", 880.0, {1.0, 0.4}, {220, 70, 220}, ShapeKind::Ring, 2.8, std::numbers::pi / 6},
      {"cross", 495.0, {1.0, 0.6, 0.3, 0.15}, {60, 220, 225}, ShapeKind::Cross, 1.8, 2 * std::numbers::pi / 3},
      {"bar", 385.0, {1.0, 0.3, 0.5}, {245, 150, 40}, ShapeKind::Bar, 2.2, std::numbers::pi / 3},
      {"star", 770.0, {1.0, 0.5}, {235, 235, 235}, ShapeKind::Star, 1.5, 5 * std::numbers::pi / 6},
  };
  if (n < 2 || n > static_cast<int>(table.size()))
    throw InvalidInput("synthetic corpus supports 2.." + std::to_string(table.size()) + " categories, got " +
                       std::to_string(n));
  std::vector<SynthCategory> out(table.begin(), table.begin() + n);
  if (static_control) {
    out.back().still = true;
    out.back().name = "still_" + out.back().name;
  }
  return out;
}

// Inside test in shape-local coordinates scaled so the shape spans [-1, 1].
inline bool inside_shape(ShapeKind k, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (k) {
    case ShapeKind::Disc: return u * u + v * v <= 1.0;
    case ShapeKind::Square: return au <= 0.85 && av <= 0.85;
    case ShapeKind::Triangle: return v <= 0.8 && v >= 2.0 * au - 1.0;
    case ShapeKind::Diamond: return au + av <= 1.0;
    case ShapeKind::Ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case ShapeKind::Cross: return (au <= 0.3 && av <= 1.0) || (av <= 0.3 && au <= 1.0);
    case ShapeKind::Bar: return au <= 1.0 && av <= 0.4;
    case ShapeKind::Star: {
      const double r = std::sqrt(u * u + v * v), th = std::atan2(v, u);
      return r <= 0.55 + 0.45 * std::abs(std::cos(2.5 * th));
    }
  }
  return false;
}

struct SynthVideo {
  std::vector<Image> frames;
  audio::Waveform audio;
  Tensor<float> flows;        // [F-1,2,S,S], pixels per frame
  std::vector<double> speed;  // px/s at each frame time
};

// Renders one clip. Per-video variation (amplitude, phase, position, pitch,
// background) is drawn from `rng`.
inline SynthVideo render_synthetic_video(const SynthCategory& cat, Rng& rng, const SynthOptions& o) {
  const int S = o.size;
  const int F = static_cast<int>(std::lround(o.seconds * o.fps));
  const double radius = S * uniform(rng, 0.11, 0.15);
  const double amp = cat.still ? 0.0 : S * uniform(rng, 0.16, 0.24);
  const double period = cat.period_s * uniform(rng, 0.95, 1.05);
  const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
  const double angle = cat.angle_rad + uniform(rng, -0.15, 0.15);
  const double cx = S / 2.0 + uniform(rng, -0.06, 0.06) * S, cy = S / 2.0 + uniform(rng, -0.06, 0.06) * S;
  const double pitch = cat.carrier_hz * uniform(rng, 0.98, 1.02);
  const double bg = uniform(rng, 20.0, 60.0);
  std::vector<double> partial_phase;
  for (std::size_t h = 0; h < cat.harmonics.size(); ++h) partial_phase.push_back(uniform(rng, 0.0, 2 * std::numbers::pi));

  const double w = 2 * std::numbers::pi / period;
  auto position = [&](double t) {
    const double d = amp * std::sin(w * t + phase);
    return std::array<double, 2>{cx + d * std::cos(angle), cy + d * std::sin(angle)};
  };
  auto speed = [&](double t) { return std::abs(amp * w * std::cos(w * t + phase)); };
  const double vmax = amp * w;

  SynthVideo out;
  static constexpr double kSub[2] = {0.25, 0.75};
  for (int f = 0; f < F; ++f) {
    const double t = static_cast<double>(f) / o.fps;
    const auto p = position(t);
    out.speed.push_back(speed(t));
    Image img{S, S, 3, std::vector<unsigned char>(static_cast<std::size_t>(S) * S * 3)};
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        int hits = 0;
        for (double sy : kSub)
          for (double sx : kSub) hits += inside_shape(cat.shape, (x + sx - p[0]) / radius, (y + sy - p[1]) / radius);
        const double a = hits / 4.0;
        for (int c = 0; c < 3; ++c)
          img.pixels[(static_cast<std::size_t>(y) * S + x) * 3 + c] =
              static_cast<std::uint8_t>(std::lround(a * cat.color[c] + (1 - a) * bg));
      }
    out.frames.push_back(std::move(img));
  }

  if (o.flows) {
    out.flows = Tensor<float>({F - 1, 2, S, S});
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    for (int f = 0; f + 1 < F; ++f) {
      const auto p0 = position(static_cast<double>(f) / o.fps), p1 = position(static_cast<double>(f + 1) / o.fps);
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
          if (inside_shape(cat.shape, (x + 0.5 - p0[0]) / radius, (y + 0.5 - p0[1]) / radius)) {
            out.flows[(static_cast<std::size_t>(f) * 2) * plane + y * S + x] = static_cast<float>(p1[0] - p0[0]);
            out.flows[(static_cast<std::size_t>(f) * 2 + 1) * plane + y * S + x] = static_cast<float>(p1[1] - p0[1]);
          }
    }
  }

  const auto L = static_cast<std::size_t>(std::lround(o.seconds * o.sample_rate));
  out.audio.sample_rate = o.sample_rate;
  out.audio.samples.resize(L);
  double norm = 0;
  for (double h : cat.harmonics) norm += h;
  for (std::size_t i = 0; i < L; ++i) {
    const double t = static_cast<double>(i) / o.sample_rate;
    const double env = cat.still ? 0.6 : 0.15 + 0.85 * speed(t) / vmax;
    double s = 0;
    for (std::size_t h = 0; h < cat.harmonics.size(); ++h) {
      const double fh = pitch * static_cast<double>(h + 1);
      if (fh < o.sample_rate / 2.0) s += cat.harmonics[h] * std::sin(2 * std::numbers::pi * fh * t + partial_phase[h]);
    }
    out.audio.samples[i] = 0.3 * env * s / norm;
  }
  return out;
}

// R^2 of a least-squares line fitting per-frame audio RMS (one video frame
// window centred on each frame time) to the shape speed.
inline double envelope_speed_r2(const audio::Waveform& a, const std::vector<double>& speed, int fps) {
  std::vector<double> xs, ys;
  const double half = 0.5 * a.sample_rate / fps;
  for (std::size_t f = 0; f < speed.size(); ++f) {
    const double c = static_cast<double>(f) * a.sample_rate / fps;
    const auto lo = static_cast<std::int64_t>(std::ceil(c - half)), hi = static_cast<std::int64_t>(std::floor(c + half));
    if (lo < 0 || hi >= a.size()) continue;
    double e = 0;
    for (std::int64_t i = lo; i <= hi; ++i) e += a.samples[static_cast<std::size_t>(i)] * a.samples[static_cast<std::size_t>(i)];
    xs.push_back(speed[f]);
    ys.push_back(std::sqrt(e / static_cast<double>(hi - lo + 1)));
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i] / n, my += ys[i] / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return 0.0;
  return sxy * sxy / (sxx * syy);
}

// Writes videos/<id>/{frames/NNNNNN.png, audio.wav, flow.cft} and
// manifest.jsonl under out_dir. Video i belongs to category i mod C; the last
// test_fraction of each category is held out for testing.
inline Manifest generate_synthetic(const std::filesystem::path& out_dir, int n_videos, int n_categories,
                                   std::uint64_t seed, const SynthOptions& o = {}) {
  if (n_videos < 2) throw InvalidInput("need at least 2 videos");
  const auto cats = synth_categories(n_categories, o.static_control);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "videos", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "videos").string() + ": " + ec.message());
  std::vector<int> per_cat(cats.size(), 0);
  for (int i = 0; i < n_videos; ++i) ++per_cat[static_cast<std::size_t>(i % n_categories)];
  Manifest m;
  std::vector<int> seen(cats.size(), 0);
  for (int i = 0; i < n_videos; ++i) {
    const auto c = static_cast<std::size_t>(i % n_categories);
    const int k = seen[c]++;
    const int n_test = static_cast<int>(std::ceil(o.test_fraction * per_cat[c] - 1e-9));
    const int n_val = static_cast<int>(std::ceil(o.val_fraction * per_cat[c] - 1e-9));
    std::string split = "train";
    if (k >= per_cat[c] - n_test) split = "test";
    else if (k >= per_cat[c] - n_test - n_val) split = "val";

    char idbuf[64];
    std::snprintf(idbuf, sizeof idbuf, "%s_%03d", cats[c].name.c_str(), k);
    const std::string id = idbuf;
    const auto dir = out_dir / "videos" / id;
    std::filesystem::create_directories(dir / "frames", ec);
    if (ec) throw IoError("cannot create " + (dir / "frames").string() + ": " + ec.message());
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const auto v = render_synthetic_video(cats[c], rng, o);
    for (std::size_t f = 0; f < v.frames.size(); ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.png", f);
      write_png(dir / "frames" / name, v.frames[f]);
    }
    audio::write_wav(dir / "audio.wav", v.audio);
    ManifestEntry e{id, dir / "frames", {}, dir / "audio.wav", {}, cats[c].name, split};
    if (o.flows) {
      save_tensor(dir / "flow.cft", v.flows, Codec::Zlib);
      e.flow_path = dir / "flow.cft";
    }
    m.entries.push_back(std::move(e));
  }
  save_manifest(out_dir / "manifest.jsonl", m);
  return m;
}

}  // namespace cof::io
