#pragma once

#include <memory>
#include <string>

#include "cof/vision/backbone.hpp"
#include "cof/vision/dynamic_image.hpp"

namespace cof::vision {

enum class VisionKind { C2dRgb, C2dDyn, C3dRgb, C3dFlo, MaRgb, MaFlo };

inline std::string to_string(VisionKind k) {
  switch (k) {
    case VisionKind::C2dRgb: return "c2d-rgb";
    case VisionKind::C2dDyn: return "c2d-dyn";
    case VisionKind::C3dRgb: return "c3d-rgb";
    case VisionKind::C3dFlo: return "c3d-flo";
    case VisionKind::MaRgb: return "ma-rgb";
    case VisionKind::MaFlo: return "ma-flo";
  }
  return "?";
}

inline VisionKind parse_vision_kind(const std::string& s) {
  for (auto k : {VisionKind::C2dRgb, VisionKind::C2dDyn, VisionKind::C3dRgb, VisionKind::C3dFlo, VisionKind::MaRgb,
                 VisionKind::MaFlo})
    if (to_string(k) == s) return k;
  throw InvalidInput("unknown vision network '" + s + "'");
}

inline bool needs_flow(VisionKind k) { return k == VisionKind::C3dFlo || k == VisionKind::MaFlo; }

// A batch of clips. frames: [B,3,T,H,W] in [0,1]; flows: [B,2,T-1,H,W] or empty.
template <class T>
struct Clip {
  Var<T> frames;
  Var<T> flows;

  bool has_flows() const { return flows.rank() == 5; }
};

namespace detail {
inline void check_clip_tensor(const Shape& s, std::int64_t channels, const char* what) {
  if (s.size() != 5) throw InvalidInput(std::string(what) + ": expects [B,C,T,H,W], got " + shape_str(s));
  if (s[1] != channels)
    throw InvalidInput(std::string(what) + ": expects " + std::to_string(channels) + " channels, got " + shape_str(s));
  if (s[3] % 16 != 0 || s[4] % 16 != 0 || s[3] == 0 || s[4] == 0)
    throw InvalidInput(std::string(what) + ": spatial size must be a positive multiple of 16, got " + shape_str(s));
}
}  // namespace detail

// Centre frame of [B,C,T,H,W] as [B,C,H,W].
template <class T>
Var<T> keyframe(const Var<T>& frames) {
  const auto& s = frames.shape();
  return ops::reshape(ops::slice(frames, 2, s[2] / 2, 1), {s[0], s[1], s[3], s[4]});
}

// Repeat the last flow field so that a T-1 flow stack covers T frames.
template <class T>
Var<T> pad_flows(const Var<T>& flows, std::int64_t frames) {
  const std::int64_t n = flows.dim(2);
  if (n == frames) return flows;
  if (n + 1 != frames)
    throw InvalidInput("flow stack has " + std::to_string(n) + " fields for " + std::to_string(frames) + " frames");
  return ops::concat<T>({flows, ops::slice(flows, 2, n - 1, 1)}, 2);
}

// Global max over all axes after the channel axis: [B,K,...] -> [B,K].
template <class T>
Var<T> pool_to_vector(const Var<T>& f) {
  if (f.rank() < 3) throw InvalidInput("pool_to_vector: expects [B,K,...], got " + shape_str(f.shape()));
  return ops::global_max(f);
}

template <class T>
class VisionEncoder : public nn::Module<T> {
 public:
  explicit VisionEncoder(std::int64_t K) : K_(K) {}
  // [B,K,H,W] for 2D encoders, [B,K,T',H,W] for 3D and fused ones.
  virtual Var<T> features(const Clip<T>& clip) const = 0;
  Var<T> vector(const Clip<T>& clip) const { return pool_to_vector(features(clip)); }
  std::int64_t channels() const { return K_; }

 private:
  std::int64_t K_;
};

template <class T>
class C2dEncoder : public VisionEncoder<T> {
 public:
  C2dEncoder(bool dynamic, std::int64_t K, const BackboneConfig& cfg, Rng& rng)
      : VisionEncoder<T>(K), dynamic_(dynamic) {
    trunk_ = this->add_module("trunk", std::make_shared<ResNet2d<T>>(3, cfg, TrunkLayout::stride16(), rng));
    head_ = this->add_module("head", std::make_shared<nn::Conv2d<T>>(cfg.widths[3], K, 3, rng));
  }

  Var<T> features(const Clip<T>& clip) const override {
    detail::check_clip_tensor(clip.frames.shape(), 3, dynamic_ ? "c2d-dyn" : "c2d-rgb");
    return image_features(dynamic_ ? dynamic_image(clip.frames) : keyframe(clip.frames));
  }

  // [B,3,16H,16W] -> [B,K,H,W]
  Var<T> image_features(const Var<T>& img) const { return head_->forward(trunk_->forward(img)); }

 private:
  bool dynamic_;
  std::shared_ptr<ResNet2d<T>> trunk_;
  std::shared_ptr<nn::Conv2d<T>> head_;
};

template <class T>
class C3dEncoder : public VisionEncoder<T> {
 public:
  C3dEncoder(bool flow, std::int64_t K, const BackboneConfig& cfg, Rng& rng) : VisionEncoder<T>(K), flow_(flow) {
    trunk_ = this->add_module("trunk", std::make_shared<ResNet3d<T>>(flow ? 2 : 3, cfg, rng));
    ops::ConvGeometry g{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
    head_ = this->add_module(
        "head", std::make_shared<nn::Conv3d<T>>(cfg.widths[3], K, std::array<std::int64_t, 3>{3, 3, 3}, rng, g));
  }

  Var<T> features(const Clip<T>& clip) const override {
    if (!flow_) {
      detail::check_clip_tensor(clip.frames.shape(), 3, "c3d-rgb");
      return volume_features(clip.frames);
    }
    if (!clip.has_flows()) throw InvalidInput("c3d-flo: clip has no flow fields");
    detail::check_clip_tensor(clip.flows.shape(), 2, "c3d-flo");
    const std::int64_t frames = clip.frames.rank() == 5 ? clip.frames.dim(2) : clip.flows.dim(2) + 1;
    return volume_features(pad_flows(clip.flows, frames));
  }

  Var<T> volume_features(const Var<T>& x) const { return head_->forward(trunk_->forward(x)); }

 private:
  bool flow_;
  std::shared_ptr<ResNet3d<T>> trunk_;
  std::shared_ptr<nn::Conv3d<T>> head_;
};

// Two-stream fusion of appearance [B,K,H,W] and motion [B,K,T',H,W] features.
template <class T>
class MutualAttention : public nn::Module<T> {
 public:
  MutualAttention(std::int64_t K, Rng& rng) {
    spatial_ = this->add_module("spatial", std::make_shared<nn::Conv2d<T>>(K, 1, 1, rng));
  }

  Var<T> forward(const Var<T>& a2d, const Var<T>& a3d) const {
    if (a2d.rank() != 4 || a3d.rank() != 5 || a2d.dim(0) != a3d.dim(0) || a2d.dim(1) != a3d.dim(1) ||
        a2d.dim(2) != a3d.dim(3) || a2d.dim(3) != a3d.dim(4))
      throw InvalidInput("mutual attention: incompatible shapes " + shape_str(a2d.shape()) + " and " +
                         shape_str(a3d.shape()));
    const auto& s = a2d.shape();
    auto att = ops::reshape(ops::sigmoid(spatial_->forward(a2d)), {s[0], 1, 1, s[2], s[3]});
    auto motion = ops::add(a3d, ops::mul(a3d, att));
    auto q = ops::sigmoid(motion);
    auto inflated = ops::reshape(a2d, {s[0], s[1], 1, s[2], s[3]});
    auto appearance = ops::add(inflated, ops::mul(q, inflated));
    return ops::add(motion, appearance);
  }

  nn::Conv2d<T>& spatial_conv() { return *spatial_; }

 private:
  std::shared_ptr<nn::Conv2d<T>> spatial_;
};

template <class T>
class MaEncoder : public VisionEncoder<T> {
 public:
  MaEncoder(bool flow, std::int64_t K, const BackboneConfig& cfg, Rng& rng) : VisionEncoder<T>(K) {
    appearance_ = this->add_module("appearance", std::make_shared<C2dEncoder<T>>(false, K, cfg, rng));
    motion_ = this->add_module("motion", std::make_shared<C3dEncoder<T>>(flow, K, cfg, rng));
    fusion_ = this->add_module("fusion", std::make_shared<MutualAttention<T>>(K, rng));
  }

  Var<T> features(const Clip<T>& clip) const override {
    return fusion_->forward(appearance_->features(clip), motion_->features(clip));
  }

 private:
  std::shared_ptr<C2dEncoder<T>> appearance_;
  std::shared_ptr<C3dEncoder<T>> motion_;
  std::shared_ptr<MutualAttention<T>> fusion_;
};

template <class T>
std::shared_ptr<VisionEncoder<T>> make_encoder(VisionKind kind, std::int64_t K, const BackboneConfig& cfg, Rng& rng) {
  switch (kind) {
    case VisionKind::C2dRgb: return std::make_shared<C2dEncoder<T>>(false, K, cfg, rng);
    case VisionKind::C2dDyn: return std::make_shared<C2dEncoder<T>>(true, K, cfg, rng);
    case VisionKind::C3dRgb: return std::make_shared<C3dEncoder<T>>(false, K, cfg, rng);
    case VisionKind::C3dFlo: return std::make_shared<C3dEncoder<T>>(true, K, cfg, rng);
    case VisionKind::MaRgb: return std::make_shared<MaEncoder<T>>(false, K, cfg, rng);
    case VisionKind::MaFlo: return std::make_shared<MaEncoder<T>>(true, K, cfg, rng);
  }
  throw InvalidInput("unknown vision network");
}

}  // namespace cof::vision
