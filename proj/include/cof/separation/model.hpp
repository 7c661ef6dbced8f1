#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cof/separation/core.hpp"
#include "cof/sound/unet.hpp"
#include "cof/vision/encoders.hpp"

namespace cof::separation {

struct ModelConfig {
  std::int64_t K = 16;
  int stages = 2;
  // Vision network per stage; empty means c2d-rgb for stage 1, c2d-dyn after.
  std::vector<vision::VisionKind> vision;
  vision::BackboneConfig backbone;
  sound::UNetConfig unet;
  std::int64_t rows = 64;    // warped frequency rows
  std::int64_t frames = 64;  // spectrogram frames
  // One combiner per ordered source pair in each opponent stage instead of a
  // single shared one. Requires a fixed source count.
  bool per_pair_combiners = false;
  int sources = 2;

  vision::VisionKind stage_vision(int j) const {
    if (j < static_cast<int>(vision.size())) return vision[static_cast<std::size_t>(j)];
    if (!vision.empty() && j > 0 && vision.size() == 1) return vision[0];
    return j == 0 ? vision::VisionKind::C2dRgb : vision::VisionKind::C2dDyn;
  }

  bool needs_flows() const {
    for (int j = 0; j < stages; ++j)
      if (vision::needs_flow(stage_vision(j))) return true;
    return false;
  }

  void validate() const {
    if (K < 1) throw InvalidInput("K must be positive");
    if (stages < 1) throw InvalidInput("stage count must be at least 1");
    if (sources < 2) throw InvalidInput("source count must be at least 2");
    if (!vision.empty() && static_cast<int>(vision.size()) != stages && vision.size() != 1)
      throw InvalidInput("vision list must name one network or one per stage");
  }
};

template <class T>
struct StageOutput {
  int stage = 0;                // 1-based
  std::vector<Var<T>> g;        // per source, [B,H,W] logits
  std::vector<Tensor<T>> mask;  // per source, {0,1}
  std::vector<Tensor<T>> masked;
};

template <class T>
class CofStage : public nn::Module<T> {
 public:
  CofStage(int index, const ModelConfig& cfg, Rng& rng) : index_(index), per_pair_(index > 0 && cfg.per_pair_combiners),
                                                           sources_(cfg.sources) {
    vision_ = this->add_module("vision", vision::make_encoder<T>(cfg.stage_vision(index), cfg.K, cfg.backbone, rng));
    sound_ = this->add_module("sound", std::make_shared<sound::UNet<T>>(cfg.rows, cfg.frames, cfg.K, cfg.unet, rng));
    const int n = per_pair_ ? cfg.sources * (cfg.sources - 1) : 1;
    for (int i = 0; i < n; ++i)
      combiners_.push_back(this->add_module(n == 1 ? "combiner" : "combiner" + std::to_string(i),
                                            std::make_shared<AffineCombiner<T>>(cfg.K, rng)));
  }

  const vision::VisionEncoder<T>& vision() const { return *vision_; }
  const sound::UNet<T>& sound() const { return *sound_; }
  AffineCombiner<T>& combiner(std::size_t i = 0) { return *combiners_.at(i); }
  const AffineCombiner<T>& pair_combiner(std::size_t n, std::size_t m) const {
    if (!per_pair_) return *combiners_[0];
    return *combiners_.at(n * static_cast<std::size_t>(sources_ - 1) + (m < n ? m : m - 1));
  }
  std::size_t combiner_count() const { return combiners_.size(); }
  int index() const { return index_; }
  bool per_pair() const { return per_pair_; }

 private:
  int index_;
  bool per_pair_;
  int sources_;
  std::shared_ptr<vision::VisionEncoder<T>> vision_;
  std::shared_ptr<sound::UNet<T>> sound_;
  std::vector<std::shared_ptr<AffineCombiner<T>>> combiners_;
};

namespace detail {
template <class T>
vision::Clip<T> stack_clips(const std::vector<vision::Clip<T>>& clips) {
  std::vector<Var<T>> f, fl;
  bool flows = true;
  for (auto& c : clips) {
    f.push_back(c.frames);
    flows = flows && c.has_flows();
    if (c.has_flows()) fl.push_back(c.flows);
  }
  vision::Clip<T> out{ops::concat(f, 0), {}};
  if (flows) out.flows = ops::concat(fl, 0);
  return out;
}

template <class T>
std::vector<Var<T>> unstack(const Var<T>& x, std::size_t n) {
  const std::int64_t b = x.dim(0) / static_cast<std::int64_t>(n);
  std::vector<Var<T>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(ops::slice(x, 0, static_cast<std::int64_t>(i) * b, b));
  return out;
}

template <class T>
Var<T> network_input(const std::vector<Tensor<T>>& mags) {
  std::vector<Var<T>> parts;
  for (auto& m : mags) {
    const auto& s = m.shape();
    parts.push_back(Var<T>(sound::compress(m).reshaped({s[0], 1, s[1], s[2]})));
  }
  return parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
}
}  // namespace detail

// J-stage cascade: a plain separator followed by opponent-filter refinements.
template <class T>
class CofModel : public nn::Module<T> {
 public:
  CofModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (int j = 0; j < cfg.stages; ++j)
      stages_.push_back(this->add_module("stage" + std::to_string(j + 1), std::make_shared<CofStage<T>>(j, cfg, rng)));
  }

  const ModelConfig& config() const { return cfg_; }
  int stage_count() const { return static_cast<int>(stages_.size()); }
  CofStage<T>& stage(int j) { return *stages_.at(static_cast<std::size_t>(j)); }

  // mix: [B,H,W] warped linear magnitudes; clips: one batch per source.
  // Runs the first `J` stages (all when J <= 0).
  std::vector<StageOutput<T>> forward(const Tensor<T>& mix, const std::vector<vision::Clip<T>>& clips,
                                      int J = 0) const {
    const std::size_t N = clips.size();
    if (N < 2) throw InvalidInput("separation needs at least 2 clips");
    if (cfg_.per_pair_combiners && static_cast<int>(N) != cfg_.sources)
      throw InvalidInput("model was built for " + std::to_string(cfg_.sources) + " sources, got " + std::to_string(N));
    if (mix.rank() != 3 || mix.dim(1) != cfg_.rows || mix.dim(2) != cfg_.frames)
      throw InvalidInput("mixture grid " + shape_str(mix.shape()) + " does not match the model's " +
                         std::to_string(cfg_.rows) + "x" + std::to_string(cfg_.frames));
    if (J <= 0) J = stage_count();
    if (J > stage_count())
      throw InvalidInput("requested " + std::to_string(J) + " stages from a " + std::to_string(stage_count()) +
                         "-stage model");
    const auto all = detail::stack_clips(clips);
    std::vector<StageOutput<T>> out;
    for (int j = 0; j < J; ++j) {
      const auto& st = *stages_[static_cast<std::size_t>(j)];
      auto z = detail::unstack(st.vision().vector(all), N);
      StageOutput<T> so;
      so.stage = j + 1;
      if (j == 0) {
        auto S = st.sound().forward(detail::network_input<T>({mix}));
        for (std::size_t n = 0; n < N; ++n) so.g.push_back(sound_separator(z[n], S, st.pair_combiner(0, 1)));
      } else {
        auto F = detail::unstack(st.sound().forward(detail::network_input<T>(out.back().masked)), N);
        so.g = opponent_filter_with<T>(z, out.back().g, F, [&](std::size_t n, std::size_t m) -> const AffineCombiner<T>& {
          return st.pair_combiner(n, m);
        });
      }
      for (auto& g : so.g) {
        auto [b, y] = binarize(g.value(), mix);
        so.mask.push_back(std::move(b));
        so.masked.push_back(std::move(y));
      }
      out.push_back(std::move(so));
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  std::vector<std::shared_ptr<CofStage<T>>> stages_;
};

}  // namespace cof::separation
