#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cof/audio/frontend.hpp"
#include "cof/io/manifest.hpp"
#include "cof/io/png.hpp"
#include "cof/io/tensor_file.hpp"
#include "cof/training/config.hpp"

namespace cof::training {

// Area-weighted resize of [C,H,W] to [C,S,S].
inline std::vector<float> resize_area(const float* src, int C, int H, int W, int S) {
  std::vector<float> out(static_cast<std::size_t>(C) * S * S, 0.0f);
  const double sy = static_cast<double>(H) / S, sx = static_cast<double>(W) / S;
  for (int y = 0; y < S; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < S; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      for (int c = 0; c < C; ++c) {
        double acc = 0;
        for (int iy = static_cast<int>(y0); iy < std::min(H, static_cast<int>(std::ceil(y1))); ++iy) {
          const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
          if (wy <= 0) continue;
          for (int ix = static_cast<int>(x0); ix < std::min(W, static_cast<int>(std::ceil(x1))); ++ix) {
            const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
            if (wx <= 0) continue;
            acc += wy * wx * src[(static_cast<std::size_t>(c) * H + iy) * W + ix];
          }
        }
        out[(static_cast<std::size_t>(c) * S + y) * S + x] = static_cast<float>(acc / (sy * sx));
      }
    }
  }
  return out;
}

// One video held in memory at the working frame size.
struct VideoData {
  std::string id, category;
  Tensor<std::uint8_t> frames;  // [F,3,S,S]
  Tensor<float> flows;          // [F-1,2,S,S] or empty
  audio::Waveform audio;

  std::int64_t frame_count() const { return frames.dim(0); }
  bool has_flows() const { return flows.rank() == 4; }
};

inline std::vector<std::filesystem::path> numbered_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInput("no PNG frames in " + dir.string());
  return files;
}

inline VideoData load_video(const io::ManifestEntry& e, int frame_size, int sample_rate, bool with_flows) {
  VideoData v;
  v.id = e.id;
  v.category = e.category;
  std::vector<std::vector<float>> frames;
  int srcH = 0, srcW = 0;
  auto add_frame = [&](const float* chw, int H, int W) {
    srcH = H;
    srcW = W;
    frames.push_back(H == frame_size && W == frame_size ? std::vector<float>(chw, chw + 3 * H * W)
                                                        : resize_area(chw, 3, H, W, frame_size));
  };
  if (!e.frame_dir.empty()) {
    for (auto& f : numbered_images(e.frame_dir)) {
      auto t = io::image_to_tensor<float>(io::read_png_rgb(f));
      add_frame(t.data(), static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2)));
    }
  } else {
    const auto tf = io::read_tensor_file(e.frames_path);
    auto t = io::unpack<float>(tf);
    if (t.rank() != 4 || t.dim(1) != 3) throw InvalidInput(e.frames_path.string() + ": expected [T,3,H,W] frames");
    if (tf.dtype == io::DType::U8) t *= 1.0f / 255.0f;
    const int H = static_cast<int>(t.dim(2)), W = static_cast<int>(t.dim(3));
    for (std::int64_t i = 0; i < t.dim(0); ++i) add_frame(t.data() + i * 3 * H * W, H, W);
  }
  const auto F = static_cast<std::int64_t>(frames.size());
  v.frames = Tensor<std::uint8_t>({F, 3, frame_size, frame_size});
  for (std::int64_t i = 0; i < F; ++i)
    for (std::size_t k = 0; k < frames[i].size(); ++k)
      v.frames[static_cast<std::size_t>(i) * frames[i].size() + k] =
          static_cast<std::uint8_t>(std::lround(std::clamp(frames[i][k], 0.0f, 1.0f) * 255.0f));
  if (with_flows) {
    if (e.flow_path.empty()) throw InvalidInput("video " + e.id + " has no flow_path but the model needs flows");
    auto fl = io::load_tensor<float>(e.flow_path);
    if (fl.rank() != 4 || fl.dim(1) != 2 || fl.dim(0) != F - 1)
      throw InvalidInput(e.flow_path.string() + ": expected [" + std::to_string(F - 1) + ",2,H,W] flows, got " +
                         shape_str(fl.shape()));
    const int H = static_cast<int>(fl.dim(2)), W = static_cast<int>(fl.dim(3));
    if (H != srcH || W != srcW) throw InvalidInput(e.flow_path.string() + ": flow size differs from frame size");
    v.flows = Tensor<float>({F - 1, 2, frame_size, frame_size});
    const float ux = static_cast<float>(frame_size) / W, uy = static_cast<float>(frame_size) / H;
    for (std::int64_t i = 0; i < F - 1; ++i) {
      auto r = resize_area(fl.data() + i * 2 * H * W, 2, H, W, frame_size);
      const std::size_t plane = static_cast<std::size_t>(frame_size) * frame_size;
      for (std::size_t k = 0; k < plane; ++k) {
        v.flows[(i * 2) * plane + k] = r[k] * ux;
        v.flows[(i * 2 + 1) * plane + k] = r[plane + k] * uy;
      }
    }
  }
  if (!e.audio_path.empty()) v.audio = audio::load_audio(e.audio_path, sample_rate);
  return v;
}

class VideoStore {
 public:
  VideoStore(io::Manifest manifest, const Config& cfg, bool with_flows) : manifest_(std::move(manifest)) {
    for (auto& e : manifest_.entries) videos_.push_back(load_video(e, cfg.video.frame_size, cfg.audio.sample_rate, with_flows));
  }
  const io::Manifest& manifest() const { return manifest_; }
  const VideoData& video(std::size_t i) const { return videos_.at(i); }
  std::size_t size() const { return videos_.size(); }
  std::vector<std::size_t> split(const std::string& name) const { return manifest_.split(name); }

 private:
  io::Manifest manifest_;
  std::vector<VideoData> videos_;
};

// Scale-crop-flip shared by every frame of a clip.
struct FrameWarp {
  double scale = 1.0, ox = 0.0, oy = 0.0;
  bool flip = false;

  static FrameWarp random(Rng& rng, int S) {
    FrameWarp w;
    w.scale = uniform(rng, 1.0, 1.15);
    const double span = S - S / w.scale;
    w.ox = uniform(rng, 0.0, span);
    w.oy = uniform(rng, 0.0, span);
    w.flip = uniform(rng) < 0.5;
    return w;
  }
  bool identity() const { return scale == 1.0 && ox == 0.0 && oy == 0.0 && !flip; }
};

// Bilinear sample of one [S,S] plane under the warp.
template <class Src>
void warp_plane(const Src* src, int S, const FrameWarp& w, float gain, float* dst) {
  for (int y = 0; y < S; ++y) {
    const double fy = std::clamp(w.oy + (y + 0.5) / w.scale - 0.5, 0.0, S - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(S - 1, y0 + 1);
    const double ay = fy - y0;
    for (int x = 0; x < S; ++x) {
      const int xo = w.flip ? S - 1 - x : x;
      const double fx = std::clamp(w.ox + (xo + 0.5) / w.scale - 0.5, 0.0, S - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(S - 1, x0 + 1);
      const double ax = fx - x0;
      const double v = (1 - ay) * ((1 - ax) * src[y0 * S + x0] + ax * src[y0 * S + x1]) +
                       ay * ((1 - ax) * src[y1 * S + x0] + ax * src[y1 * S + x1]);
      dst[y * S + x] = static_cast<float>(v) * gain;
    }
  }
}

struct TrainingExample {
  std::vector<std::size_t> videos;
  std::vector<std::string> ids;
  std::vector<std::int64_t> start_frames;
  std::vector<audio::Waveform> sources;
  audio::Waveform mixture;
  audio::ComplexSpectrogram mix_spec;
  audio::WarpedMagnitude mix_warped;
  std::vector<audio::WarpedMagnitude> source_warped;
  std::vector<audio::BinaryMask> gt;
  std::vector<Tensor<float>> frames;  // [3,T,S,S] per source
  std::vector<Tensor<float>> flows;   // [2,T-1,S,S] per source, or empty
};

inline audio::Waveform crop_audio(const audio::Waveform& w, std::int64_t offset, std::int64_t length) {
  audio::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(static_cast<std::size_t>(length), 0.0);
  for (std::int64_t i = 0; i < length; ++i) {
    const std::int64_t j = offset + i;
    if (j >= 0 && j < w.size()) out.samples[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(j)];
  }
  return out;
}

// Frames [3,T,S,S] (and flows [2,T-1,S,S] when the video has them) of the
// clip starting at frame `start`, under warp `w`.
inline void clip_tensors(const VideoData& v, std::int64_t start, const Config& cfg, const FrameWarp& w,
                         Tensor<float>& frames, Tensor<float>& flows) {
  const int T = cfg.video.clip_frames, S = cfg.video.frame_size;
  if (v.frames.dim(2) != S) throw InvalidInput("video " + v.id + " is stored at a different frame size");
  if (start < 0 || start + T > v.frame_count())
    throw InvalidInput("video " + v.id + " has " + std::to_string(v.frame_count()) + " frames, a clip of " +
                       std::to_string(T) + " from frame " + std::to_string(start) + " does not fit");
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  frames = Tensor<float>({3, T, S, S});
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t* src = v.frames.data() + ((start + t) * 3 + c) * plane;
      warp_plane(src, S, w, 1.0f / 255.0f, frames.data() + (static_cast<std::size_t>(c) * T + t) * plane);
    }
  flows = Tensor<float>();
  if (!v.has_flows()) return;
  flows = Tensor<float>({2, T - 1, S, S});
  for (int t = 0; t < T - 1; ++t)
    for (int c = 0; c < 2; ++c) {
      const float* src = v.flows.data() + ((start + t) * 2 + c) * plane;
      const float gain = static_cast<float>(w.scale) * (c == 0 && w.flip ? -1.0f : 1.0f);
      warp_plane(src, S, w, gain, flows.data() + (static_cast<std::size_t>(c) * (T - 1) + t) * plane);
    }
}

// Builds the example for the given videos and start frames. Augmentation is
// drawn from `aug` when it is non-null.
inline TrainingExample make_example(const VideoStore& store, const std::vector<std::size_t>& videos,
                                    const std::vector<std::int64_t>& starts, const Config& cfg, Rng* aug) {
  TrainingExample ex;
  ex.videos = videos;
  ex.start_frames = starts;
  const std::int64_t L = cfg.audio.clip_samples();
  for (std::size_t n = 0; n < videos.size(); ++n) {
    const auto& v = store.video(videos[n]);
    ex.ids.push_back(v.id);
    const std::int64_t s = starts[n];
    const auto offset = static_cast<std::int64_t>(std::llround(static_cast<double>(s) * cfg.audio.sample_rate / cfg.video.fps));
    ex.sources.push_back(crop_audio(v.audio, offset, L));
    const FrameWarp w = aug ? FrameWarp::random(*aug, cfg.video.frame_size) : FrameWarp{};
    Tensor<float> fr, fl;
    clip_tensors(v, s, cfg, w, fr, fl);
    ex.frames.push_back(std::move(fr));
    if (fl.rank() == 4) ex.flows.push_back(std::move(fl));
  }
  ex.mixture = audio::mix(ex.sources);
  ex.mix_spec = audio::stft(ex.mixture, cfg.audio.window, cfg.audio.hop);
  ex.mix_warped = audio::log_warp(ex.mix_spec.magnitude(), cfg.audio.rows);
  for (auto& s : ex.sources)
    ex.source_warped.push_back(audio::log_warp(audio::stft(s, cfg.audio.window, cfg.audio.hop).magnitude(), cfg.audio.rows));
  for (std::size_t n = 0; n < videos.size(); ++n) ex.gt.push_back(audio::dominant_mask(ex.source_warped, n));
  return ex;
}

// N distinct videos from `pool`, each with a random temporal crop.
inline TrainingExample sample_example(const VideoStore& store, const std::vector<std::size_t>& pool, int N,
                                      std::uint64_t seed, const Config& cfg, bool augment) {
  if (N < 2) throw InvalidInput("need at least 2 sources per mixture");
  if (static_cast<int>(pool.size()) < N)
    throw InvalidInput("need " + std::to_string(N) + " videos to mix, the pool has " + std::to_string(pool.size()));
  Rng rng(seed);
  std::vector<std::size_t> p = pool, chosen;
  for (int k = 0; k < N; ++k) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, k, static_cast<std::int64_t>(p.size()) - 1));
    std::swap(p[static_cast<std::size_t>(k)], p[j]);
    chosen.push_back(p[static_cast<std::size_t>(k)]);
  }
  std::vector<std::int64_t> starts;
  for (auto v : chosen)
    starts.push_back(uniform_int(rng, 0, std::max<std::int64_t>(0, store.video(v).frame_count() - cfg.video.clip_frames)));
  return make_example(store, chosen, starts, cfg, augment ? &rng : nullptr);
}

// Network-ready tensors for a batch of examples with equal source counts.
struct Batch {
  Tensor<float> mix;                     // [B,R,F] warped linear magnitude
  std::vector<vision::Clip<float>> clips;  // per source
  std::vector<Tensor<float>> gt;         // per source [B,R,F]
};

inline Batch collate(const std::vector<TrainingExample>& exs) {
  if (exs.empty()) throw InvalidInput("empty batch");
  const auto B = static_cast<std::int64_t>(exs.size());
  const std::size_t N = exs[0].videos.size();
  const auto R = exs[0].mix_warped.rows(), F = exs[0].mix_warped.frames();
  Batch b;
  b.mix = Tensor<float>({B, R, F});
  const std::size_t P = static_cast<std::size_t>(R * F);
  for (std::int64_t i = 0; i < B; ++i)
    for (std::size_t p = 0; p < P; ++p) b.mix[i * P + p] = static_cast<float>(exs[i].mix_warped.mags[p]);
  for (std::size_t n = 0; n < N; ++n) {
    Tensor<float> g({B, R, F});
    for (std::int64_t i = 0; i < B; ++i)
      for (std::size_t p = 0; p < P; ++p) g[i * P + p] = static_cast<float>(exs[i].gt[n].values[p]);
    b.gt.push_back(std::move(g));
    auto stack = [&](const std::vector<Tensor<float>> TrainingExample::*field) {
      Shape s = (exs[0].*field)[n].shape();
      s.insert(s.begin(), B);
      Tensor<float> t(s);
      const std::size_t each = (exs[0].*field)[n].size();
      for (std::int64_t i = 0; i < B; ++i) std::copy_n((exs[i].*field)[n].data(), each, t.data() + i * each);
      return t;
    };
    vision::Clip<float> c{Var<float>(stack(&TrainingExample::frames)), {}};
    if (!exs[0].flows.empty()) c.flows = Var<float>(stack(&TrainingExample::flows));
    b.clips.push_back(std::move(c));
  }
  return b;
}

}  // namespace cof::training
