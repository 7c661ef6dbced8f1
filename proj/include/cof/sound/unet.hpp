#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "cof/core/nn.hpp"

namespace cof::sound {

struct UNetConfig {
  int levels = 0;  // 0: min(7, log2(size) - 1)
  std::int64_t base = 8;
  std::int64_t max_mult = 8;
};

inline int auto_levels(std::int64_t rows, std::int64_t cols) {
  const std::int64_t m = std::min(rows, cols);
  if (m < 4) throw InvalidInput("spectrogram grid too small for a U-Net: " + std::to_string(m));
  int l = 0;
  while ((std::int64_t{1} << (l + 1)) <= m) ++l;  // floor(log2 m)
  return std::min(7, l - 1);
}

// Encoder-decoder over [B,1,H,W] returning K feature maps [B,K,H,W].
template <class T>
class UNet : public nn::Module<T> {
 public:
  UNet(std::int64_t rows, std::int64_t cols, std::int64_t K, const UNetConfig& cfg, Rng& rng)
      : levels_(cfg.levels > 0 ? cfg.levels : auto_levels(rows, cols)), K_(K) {
    check_size(rows, cols);
    std::vector<std::int64_t> ch(static_cast<std::size_t>(levels_) + 1, 1);
    for (int l = 1; l <= levels_; ++l) ch[l] = cfg.base * std::min(cfg.max_mult, std::int64_t{1} << (l - 1));
    in_bn_ = this->add_module("in_bn", std::make_shared<nn::BatchNorm<T>>(1));
    for (int l = 1; l <= levels_; ++l) {
      const std::string n = "down" + std::to_string(l);
      down_.push_back(this->add_module(n, std::make_shared<nn::Conv2d<T>>(ch[l - 1], ch[l], 3, rng, 2, 1, 1, l == 1)));
      down_bn_.push_back(l == 1 ? nullptr : this->add_module(n + "_bn", std::make_shared<nn::BatchNorm<T>>(ch[l])));
    }
    for (int l = levels_; l >= 2; --l) {
      const std::int64_t in = l == levels_ ? ch[l] : 2 * ch[l];
      const std::string n = "up" + std::to_string(l);
      up_.push_back(this->add_module(n, std::make_shared<nn::Conv2d<T>>(in, ch[l - 1], 3, rng, 1, 1, 1, false)));
      up_bn_.push_back(this->add_module(n + "_bn", std::make_shared<nn::BatchNorm<T>>(ch[l - 1])));
    }
    const std::int64_t last_in = levels_ == 1 ? ch[1] : 2 * ch[1];
    out_ = this->add_module("out", std::make_shared<nn::Conv2d<T>>(last_in, K, 3, rng, 1, 1, 1, true));
  }

  Var<T> forward(const Var<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 1) throw InvalidInput("sound net expects [B,1,H,W], got " + shape_str(x.shape()));
    check_size(x.dim(2), x.dim(3));
    std::vector<Var<T>> skips;
    auto h = in_bn_->forward(x);
    for (int l = 0; l < levels_; ++l) {
      h = down_[l]->forward(h);
      if (down_bn_[l]) h = down_bn_[l]->forward(h);
      h = ops::leaky_relu(h, T(0.2));
      skips.push_back(h);
    }
    for (int i = 0; i < levels_ - 1; ++i) {
      h = ops::relu(up_bn_[i]->forward(up_[i]->forward(ops::upsample_nearest2d(h, 2))));
      h = ops::concat<T>({h, skips[static_cast<std::size_t>(levels_ - 2 - i)]}, 1);
    }
    return out_->forward(ops::upsample_nearest2d(h, 2));
  }

  int levels() const { return levels_; }
  std::int64_t channels() const { return K_; }

 private:
  void check_size(std::int64_t rows, std::int64_t cols) const {
    const std::int64_t m = std::int64_t{1} << levels_;
    if (rows % m != 0 || cols % m != 0)
      throw InvalidInput("spectrogram grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " is not divisible by 2^" + std::to_string(levels_));
  }

  int levels_;
  std::int64_t K_;
  std::shared_ptr<nn::BatchNorm<T>> in_bn_;
  std::vector<std::shared_ptr<nn::Conv2d<T>>> down_, up_;
  std::vector<std::shared_ptr<nn::BatchNorm<T>>> down_bn_, up_bn_;
  std::shared_ptr<nn::Conv2d<T>> out_;
};

// log(1 + mag), the network-side compression of magnitudes.
template <class T>
Tensor<T> compress(const Tensor<T>& mag) {
  Tensor<T> out(mag.shape());
  for (std::size_t i = 0; i < mag.size(); ++i) out[i] = std::log1p(mag[i]);
  return out;
}

}  // namespace cof::sound
