#pragma once

#include <memory>
#include <vector>

#include "cof/vision/backbone.hpp"

namespace cof::sslm {

// Residual 2x up-projection: nearest upsample, then a two-conv branch plus a
// one-conv projection branch.
template <class T>
class UpProjection : public nn::Module<T> {
 public:
  UpProjection(std::int64_t in, std::int64_t out, Rng& rng) {
    a1_ = this->add_module("a1", std::make_shared<nn::Conv2d<T>>(in, out, 3, rng, 1, 1, 1, false));
    a1_bn_ = this->add_module("a1_bn", std::make_shared<nn::BatchNorm<T>>(out));
    a2_ = this->add_module("a2", std::make_shared<nn::Conv2d<T>>(out, out, 3, rng, 1, 1, 1, false));
    a2_bn_ = this->add_module("a2_bn", std::make_shared<nn::BatchNorm<T>>(out));
    p_ = this->add_module("proj", std::make_shared<nn::Conv2d<T>>(in, out, 3, rng, 1, 1, 1, false));
    p_bn_ = this->add_module("proj_bn", std::make_shared<nn::BatchNorm<T>>(out));
  }

  Var<T> forward(const Var<T>& x) const {
    auto u = ops::upsample_nearest2d(x, 2);
    auto a = a2_bn_->forward(a2_->forward(ops::relu(a1_bn_->forward(a1_->forward(u)))));
    return ops::relu(ops::add(a, p_bn_->forward(p_->forward(u))));
  }

 private:
  std::shared_ptr<nn::Conv2d<T>> a1_, a2_, p_;
  std::shared_ptr<nn::BatchNorm<T>> a1_bn_, a2_bn_, p_bn_;
};

// Frame [B,3,H,W] -> location mask [B,1,H,W] in [0,1].
template <class T>
class SslmNet : public nn::Module<T> {
 public:
  SslmNet(const vision::BackboneConfig& cfg, Rng& rng) {
    encoder_ = this->add_module("encoder",
                                std::make_shared<vision::ResNet2d<T>>(3, cfg, vision::TrunkLayout::stride8(), rng));
    std::int64_t c = cfg.widths[3];
    for (int i = 0; i < 3; ++i) {
      const std::int64_t o = std::max<std::int64_t>(4, c / 2);
      up_.push_back(this->add_module("up" + std::to_string(i + 1), std::make_shared<UpProjection<T>>(c, o, rng)));
      c = o;
    }
    head_ = this->add_module("head", std::make_shared<nn::Conv2d<T>>(c, 1, 3, rng));
  }

  Var<T> forward(const Var<T>& frame) const {
    if (frame.rank() != 4 || frame.dim(1) != 3 || frame.dim(2) % 8 != 0 || frame.dim(3) % 8 != 0)
      throw InvalidInput("localizer expects [B,3,H,W] with H, W multiples of 8, got " + shape_str(frame.shape()));
    auto h = encoder_->forward(frame);
    for (auto& u : up_) h = u->forward(h);
    return ops::sigmoid(head_->forward(h));
  }

  nn::Conv2d<T>& head() { return *head_; }

 private:
  std::shared_ptr<vision::ResNet2d<T>> encoder_;
  std::vector<std::shared_ptr<UpProjection<T>>> up_;
  std::shared_ptr<nn::Conv2d<T>> head_;
};

// frames: [B,C,H,W] or [B,C,T,H,W]; mask: [B,1,H,W]. Same mask for every
// channel and time step.
template <class T>
Var<T> apply_location_mask(const Var<T>& frames, const Var<T>& mask) {
  const auto& f = frames.shape();
  const auto& m = mask.shape();
  const bool ok = mask.rank() == 4 && m[1] == 1 && (frames.rank() == 4 || frames.rank() == 5) && m[0] == f[0] &&
                  m[2] == f[f.size() - 2] && m[3] == f[f.size() - 1];
  if (!ok) throw InvalidInput("location mask " + shape_str(m) + " does not fit frames " + shape_str(f));
  if (frames.rank() == 4) return ops::mul(frames, mask);
  return ops::mul(frames, ops::reshape(mask, {m[0], 1, 1, m[2], m[3]}));
}

// sum_j r_j * mean|p_sslm - p_full| + lambda * mean(mask).
// probs[j][n]: stage j, source n; targets are held constant.
template <class T>
Var<T> sslm_loss(const std::vector<std::vector<Var<T>>>& probs, const std::vector<std::vector<Tensor<T>>>& targets,
                 const Var<T>& mask, const std::vector<T>& r, T lambda) {
  if (probs.size() != targets.size() || probs.size() != r.size())
    throw InvalidInput("sslm loss: stage counts disagree");
  Var<T> total(Tensor<T>({1}, T(0)));
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j].size() != targets[j].size()) throw InvalidInput("sslm loss: source counts disagree");
    const T w = r[j] / static_cast<T>(probs[j].size());
    for (std::size_t n = 0; n < probs[j].size(); ++n) {
      if (probs[j][n].shape() != targets[j][n].shape())
        throw InvalidInput("sslm loss: " + shape_str(probs[j][n].shape()) + " vs " + shape_str(targets[j][n].shape()));
      auto d = ops::abs(ops::sub(probs[j][n], Var<T>(targets[j][n])));
      total = ops::add(total, ops::scale(ops::mean(d), w));
    }
  }
  return ops::add(total, ops::scale(ops::mean(ops::abs(mask)), lambda));
}

}  // namespace cof::sslm
