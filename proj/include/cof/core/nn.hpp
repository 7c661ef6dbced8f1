#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cof/core/conv.hpp"
#include "cof/core/random.hpp"

namespace cof::nn {

template <class T>
using NamedParams = std::vector<std::pair<std::string, Var<T>>>;
template <class T>
using NamedBuffers = std::vector<std::pair<std::string, Tensor<T>*>>;

// Parameter/buffer/child registry with train/eval mode.
template <class T>
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void set_training(bool on) {
    training_ = on;
    for (auto& [_, c] : children_) c->set_training(on);
  }
  bool training() const { return training_; }

  NamedParams<T> named_parameters(const std::string& prefix = "") const {
    NamedParams<T> out;
    collect_params(prefix, out);
    return out;
  }
  NamedBuffers<T> named_buffers(const std::string& prefix = "") {
    NamedBuffers<T> out;
    collect_buffers(prefix, out);
    return out;
  }
  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (auto& [_, p] : named_parameters()) n += static_cast<std::int64_t>(p.value().size());
    return n;
  }
  void set_requires_grad(bool on) {
    for (auto [_, p] : named_parameters()) p.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto [_, p] : named_parameters()) p.zero_grad();
  }

 protected:
  Var<T> add_parameter(const std::string& name, Tensor<T> init) {
    Var<T> v(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
  }
  Tensor<T>& add_buffer(const std::string& name, Tensor<T> init) {
    buffers_.emplace_back(name, std::make_unique<Tensor<T>>(std::move(init)));
    return *buffers_.back().second;
  }
  template <class M>
  std::shared_ptr<M> add_module(const std::string& name, std::shared_ptr<M> m) {
    children_.emplace_back(name, m);
    return m;
  }

 private:
  void collect_params(const std::string& prefix, NamedParams<T>& out) const {
    for (auto& [n, p] : params_) out.emplace_back(prefix + n, p);
    for (auto& [n, c] : children_) c->collect_params(prefix + n + ".", out);
  }
  void collect_buffers(const std::string& prefix, NamedBuffers<T>& out) {
    for (auto& [n, b] : buffers_) out.emplace_back(prefix + n, b.get());
    for (auto& [n, c] : children_) c->collect_buffers(prefix + n + ".", out);
  }

  NamedParams<T> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor<T>>>> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
  bool training_ = true;
};

// He-normal fan-in initialisation.
template <class T>
Tensor<T> kaiming(Shape s, std::int64_t fan_in, Rng& rng, double gain = std::sqrt(2.0)) {
  return randn<T>(std::move(s), rng, gain / std::sqrt(static_cast<double>(fan_in)));
}

template <class T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t k, Rng& rng, std::int64_t stride = 1, std::int64_t pad = -1,
         std::int64_t dilation = 1, bool bias = true)
      : stride_(stride), pad_(pad < 0 ? dilation * (k / 2) : pad), dilation_(dilation) {
    weight_ = this->add_parameter("weight", kaiming<T>({out, in, k, k}, in * k * k, rng));
    if (bias) {
      bias_ = this->add_parameter("bias", Tensor<T>::zeros({out}));
      has_bias_ = true;
    }
  }
  Var<T> forward(const Var<T>& x) const {
    return ops::conv2d(x, weight_, has_bias_ ? &bias_ : nullptr, stride_, pad_, dilation_);
  }
  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }

 private:
  Var<T> weight_, bias_;
  bool has_bias_ = false;
  std::int64_t stride_, pad_, dilation_;
};

template <class T>
class Conv3d : public Module<T> {
 public:
  Conv3d(std::int64_t in, std::int64_t out, std::array<std::int64_t, 3> k, Rng& rng, ops::ConvGeometry g,
         bool bias = true)
      : geom_(g) {
    const std::int64_t fan = in * k[0] * k[1] * k[2];
    weight_ = this->add_parameter("weight", kaiming<T>({out, in, k[0], k[1], k[2]}, fan, rng));
    if (bias) {
      bias_ = this->add_parameter("bias", Tensor<T>::zeros({out}));
      has_bias_ = true;
    }
  }
  Var<T> forward(const Var<T>& x) const { return ops::conv3d(x, weight_, has_bias_ ? &bias_ : nullptr, geom_); }

 private:
  Var<T> weight_, bias_;
  bool has_bias_ = false;
  ops::ConvGeometry geom_;
};

template <class T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(std::int64_t channels)
      : gamma_(this->add_parameter("gamma", Tensor<T>::ones({channels}))),
        beta_(this->add_parameter("beta", Tensor<T>::zeros({channels}))),
        running_mean_(&this->add_buffer("running_mean", Tensor<T>::zeros({channels}))),
        running_var_(&this->add_buffer("running_var", Tensor<T>::ones({channels}))) {}

  Var<T> forward(const Var<T>& x) const {
    return ops::batch_norm(x, gamma_, beta_, *running_mean_, *running_var_, this->training());
  }

 private:
  Var<T> gamma_, beta_;
  Tensor<T>* running_mean_;
  Tensor<T>* running_var_;
};

}  // namespace cof::nn
