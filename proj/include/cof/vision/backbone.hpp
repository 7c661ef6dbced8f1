#pragma once

#include <array>
#include <memory>
#include <vector>

#include "cof/core/nn.hpp"

namespace cof::vision {

// Channel widths of the four residual stages; blocks per stage.
struct BackboneConfig {
  std::array<std::int64_t, 4> widths{16, 16, 32, 32};
  int blocks = 1;

  static BackboneConfig resnet18() { return {{64, 128, 256, 512}, 2}; }
};

// Per-stage stride and dilation of a 2D residual trunk.
struct TrunkLayout {
  std::array<std::int64_t, 4> stride;
  std::array<std::int64_t, 4> dilation;

  // Output stride 16 with the last stage dilated by 2.
  static TrunkLayout stride16() { return {{1, 2, 2, 1}, {1, 1, 1, 2}}; }
  // Output stride 8, later stages dilated instead of strided.
  static TrunkLayout stride8() { return {{1, 2, 1, 1}, {1, 1, 2, 4}}; }
};

template <class T>
class BasicBlock2d : public nn::Module<T> {
 public:
  BasicBlock2d(std::int64_t in, std::int64_t out, std::int64_t stride, std::int64_t dilation, Rng& rng) {
    conv1_ = this->add_module("conv1", std::make_shared<nn::Conv2d<T>>(in, out, 3, rng, stride, -1, dilation, false));
    bn1_ = this->add_module("bn1", std::make_shared<nn::BatchNorm<T>>(out));
    conv2_ = this->add_module("conv2", std::make_shared<nn::Conv2d<T>>(out, out, 3, rng, 1, -1, dilation, false));
    bn2_ = this->add_module("bn2", std::make_shared<nn::BatchNorm<T>>(out));
    if (stride != 1 || in != out) {
      down_ = this->add_module("down", std::make_shared<nn::Conv2d<T>>(in, out, 1, rng, stride, 0, 1, false));
      down_bn_ = this->add_module("down_bn", std::make_shared<nn::BatchNorm<T>>(out));
    }
  }

  Var<T> forward(const Var<T>& x) const {
    auto y = ops::relu(bn1_->forward(conv1_->forward(x)));
    y = bn2_->forward(conv2_->forward(y));
    auto skip = down_ ? down_bn_->forward(down_->forward(x)) : x;
    return ops::relu(ops::add(y, skip));
  }

 private:
  std::shared_ptr<nn::Conv2d<T>> conv1_, conv2_, down_;
  std::shared_ptr<nn::BatchNorm<T>> bn1_, bn2_, down_bn_;
};

// Residual 2D trunk: 7x7/2 stem, 3x3/2 max pool, four stages.
template <class T>
class ResNet2d : public nn::Module<T> {
 public:
  ResNet2d(std::int64_t in_channels, const BackboneConfig& cfg, const TrunkLayout& layout, Rng& rng)
      : out_channels_(cfg.widths[3]) {
    stem_ = this->add_module("stem", std::make_shared<nn::Conv2d<T>>(in_channels, cfg.widths[0], 7, rng, 2, 3, 1, false));
    stem_bn_ = this->add_module("stem_bn", std::make_shared<nn::BatchNorm<T>>(cfg.widths[0]));
    std::int64_t c = cfg.widths[0];
    for (int s = 0; s < 4; ++s)
      for (int b = 0; b < cfg.blocks; ++b) {
        const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
        blocks_.push_back(this->add_module(
            name, std::make_shared<BasicBlock2d<T>>(c, cfg.widths[s], b == 0 ? layout.stride[s] : 1,
                                                    layout.dilation[s], rng)));
        c = cfg.widths[s];
      }
    total_stride_ = 4 * layout.stride[0] * layout.stride[1] * layout.stride[2] * layout.stride[3];
  }

  Var<T> forward(const Var<T>& x) const {
    auto y = ops::max_pool2d(ops::relu(stem_bn_->forward(stem_->forward(x))), 3, 2, 1);
    for (auto& b : blocks_) y = b->forward(y);
    return y;
  }

  std::int64_t out_channels() const { return out_channels_; }
  std::int64_t total_stride() const { return total_stride_; }

 private:
  std::shared_ptr<nn::Conv2d<T>> stem_;
  std::shared_ptr<nn::BatchNorm<T>> stem_bn_;
  std::vector<std::shared_ptr<BasicBlock2d<T>>> blocks_;
  std::int64_t out_channels_, total_stride_ = 16;
};

template <class T>
class BasicBlock3d : public nn::Module<T> {
 public:
  BasicBlock3d(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> stride,
               std::array<std::int64_t, 3> dilation, Rng& rng) {
    ops::ConvGeometry g1{stride, dilation, dilation};
    ops::ConvGeometry g2{{1, 1, 1}, dilation, dilation};
    conv1_ = this->add_module("conv1", std::make_shared<nn::Conv3d<T>>(in, out, std::array<std::int64_t, 3>{3, 3, 3},
                                                                       rng, g1, false));
    bn1_ = this->add_module("bn1", std::make_shared<nn::BatchNorm<T>>(out));
    conv2_ = this->add_module("conv2", std::make_shared<nn::Conv3d<T>>(out, out, std::array<std::int64_t, 3>{3, 3, 3},
                                                                       rng, g2, false));
    bn2_ = this->add_module("bn2", std::make_shared<nn::BatchNorm<T>>(out));
    if (stride != std::array<std::int64_t, 3>{1, 1, 1} || in != out) {
      ops::ConvGeometry gd{stride, {0, 0, 0}, {1, 1, 1}};
      down_ = this->add_module("down", std::make_shared<nn::Conv3d<T>>(in, out, std::array<std::int64_t, 3>{1, 1, 1},
                                                                       rng, gd, false));
      down_bn_ = this->add_module("down_bn", std::make_shared<nn::BatchNorm<T>>(out));
    }
  }

  Var<T> forward(const Var<T>& x) const {
    auto y = ops::relu(bn1_->forward(conv1_->forward(x)));
    y = bn2_->forward(conv2_->forward(y));
    auto skip = down_ ? down_bn_->forward(down_->forward(x)) : x;
    return ops::relu(ops::add(y, skip));
  }

 private:
  std::shared_ptr<nn::Conv3d<T>> conv1_, conv2_, down_;
  std::shared_ptr<nn::BatchNorm<T>> bn1_, bn2_, down_bn_;
};

// Residual 3D trunk with temporal stride 8 and spatial stride 16.
template <class T>
class ResNet3d : public nn::Module<T> {
 public:
  ResNet3d(std::int64_t in_channels, const BackboneConfig& cfg, Rng& rng) : out_channels_(cfg.widths[3]) {
    ops::ConvGeometry gs{{2, 2, 2}, {1, 3, 3}, {1, 1, 1}};
    stem_ = this->add_module("stem", std::make_shared<nn::Conv3d<T>>(
                                         in_channels, cfg.widths[0], std::array<std::int64_t, 3>{3, 7, 7}, rng, gs, false));
    stem_bn_ = this->add_module("stem_bn", std::make_shared<nn::BatchNorm<T>>(cfg.widths[0]));
    const std::array<std::array<std::int64_t, 3>, 4> stride{{{2, 2, 2}, {2, 2, 2}, {1, 2, 2}, {1, 1, 1}}};
    const std::array<std::array<std::int64_t, 3>, 4> dil{{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}, {1, 2, 2}}};
    std::int64_t c = cfg.widths[0];
    for (int s = 0; s < 4; ++s)
      for (int b = 0; b < cfg.blocks; ++b) {
        const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
        blocks_.push_back(this->add_module(
            name, std::make_shared<BasicBlock3d<T>>(c, cfg.widths[s], b == 0 ? stride[s] : std::array<std::int64_t, 3>{1, 1, 1},
                                                    dil[s], rng)));
        c = cfg.widths[s];
      }
  }

  Var<T> forward(const Var<T>& x) const {
    auto y = ops::relu(stem_bn_->forward(stem_->forward(x)));
    for (auto& b : blocks_) y = b->forward(y);
    return y;
  }

  std::int64_t out_channels() const { return out_channels_; }

 private:
  std::shared_ptr<nn::Conv3d<T>> stem_;
  std::shared_ptr<nn::BatchNorm<T>> stem_bn_;
  std::vector<std::shared_ptr<BasicBlock3d<T>>> blocks_;
  std::int64_t out_channels_;
};

}  // namespace cof::vision
