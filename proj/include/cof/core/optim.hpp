#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cof/core/nn.hpp"

namespace cof::optim {

template <class T>
struct ParamGroup {
  std::string name;
  nn::NamedParams<T> params;
  double base_lr = 1e-3;
};

// Step decay: lr = base / factor^(floor(iter / every)).
struct StepSchedule {
  double factor = 10.0;
  std::int64_t every = 1600;
  double multiplier(std::int64_t iter) const {
    if (every <= 0) return 1.0;
    return std::pow(1.0 / factor, static_cast<double>(iter / every));
  }
};

// SGD with heavy-ball momentum and L2 weight decay:
//   v <- m*v + g + wd*theta ;  theta <- theta - lr*v
template <class T>
class Sgd {
 public:
  Sgd(std::vector<ParamGroup<T>> groups, double momentum, double weight_decay)
      : groups_(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(double lr_multiplier = 1.0) {
    for (auto& g : groups_) {
      const T lr = static_cast<T>(g.base_lr * lr_multiplier);
      for (auto& [name, p] : g.params) {
        if (!p.has_grad()) continue;
        auto& v = velocity(name, p.value().shape());
        T* th = p.mutable_value().data();
        const T* gr = p.grad().data();
        T* vel = v.data();
        const T m = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
        for (std::size_t i = 0; i < v.size(); ++i) {
          vel[i] = m * vel[i] + gr[i] + wd * th[i];
          th[i] -= lr * vel[i];
        }
      }
    }
  }
  void zero_grad() {
    for (auto& g : groups_)
      for (auto& [_, p] : g.params) p.zero_grad();
  }
  std::map<std::string, Tensor<T>>& state() { return velocity_; }
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }

 private:
  Tensor<T>& velocity(const std::string& name, const Shape& s) {
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Tensor<T>::zeros(s)).first;
    return it->second;
  }
  std::vector<ParamGroup<T>> groups_;
  double momentum_, weight_decay_;
  std::map<std::string, Tensor<T>> velocity_;
};

template <class T>
class Adam {
 public:
  Adam(std::vector<ParamGroup<T>> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : groups_(std::move(groups)), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(double lr_multiplier = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& g : groups_) {
      const double lr = g.base_lr * lr_multiplier;
      for (auto& [name, p] : g.params) {
        if (!p.has_grad()) continue;
        auto& m = slot(name + "#m", p.value().shape());
        auto& v = slot(name + "#v", p.value().shape());
        T* th = p.mutable_value().data();
        const T* gr = p.grad().data();
        for (std::size_t i = 0; i < m.size(); ++i) {
          m[i] = static_cast<T>(b1_ * m[i] + (1 - b1_) * gr[i]);
          v[i] = static_cast<T>(b2_ * v[i] + (1 - b2_) * gr[i] * gr[i]);
          const double mh = m[i] / c1, vh = v[i] / c2;
          th[i] -= static_cast<T>(lr * mh / (std::sqrt(vh) + eps_));
        }
      }
    }
  }
  void zero_grad() {
    for (auto& g : groups_)
      for (auto& [_, p] : g.params) p.zero_grad();
  }
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::map<std::string, Tensor<T>>& state() { return slots_; }

 private:
  Tensor<T>& slot(const std::string& name, const Shape& s) {
    auto it = slots_.find(name);
    if (it == slots_.end()) it = slots_.emplace(name, Tensor<T>::zeros(s)).first;
    return it->second;
  }
  std::vector<ParamGroup<T>> groups_;
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor<T>> slots_;
};

}  // namespace cof::optim
