#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cof/core/error.hpp"

namespace cof {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor with value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(numel_of(shape_)), fill) {
    for (auto d : shape_)
      if (d < 0) throw InvalidInput("negative dimension in shape " + shape_str(shape_));
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != numel_of(shape_))
      throw ShapeMismatch("data size " + std::to_string(data_.size()) + " does not match shape " +
                          shape_str(shape_));
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), T(1)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank()) throw InvalidInput("dim index out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(i)];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  T& at(I... idx) {
    return data_[offset({static_cast<std::int64_t>(idx)...})];
  }
  template <class... I>
  const T& at(I... idx) const {
    return data_[offset({static_cast<std::int64_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::int64_t> idx) const {
    if (idx.size() != shape_.size()) throw InvalidInput("index rank mismatch for " + shape_str(shape_));
    std::size_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
      if (i < 0 || i >= shape_[k]) throw InvalidInput("index out of range for " + shape_str(shape_));
      off = off * static_cast<std::size_t>(shape_[k]) + static_cast<std::size_t>(i);
      ++k;
    }
    return off;
  }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel_of(shape_))
      throw ShapeMismatch("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }
  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T mean() const { return data_.empty() ? T(0) : sum() / static_cast<T>(data_.size()); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  void check_same(const Tensor& o, const char* what) const {
    if (o.shape_ != shape_)
      throw ShapeMismatch(std::string(what) + ": " + shape_str(shape_) + " vs " + shape_str(o.shape_));
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape();
}

}  // namespace cof
