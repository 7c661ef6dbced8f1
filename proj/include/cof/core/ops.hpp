#pragma once

#include <cmath>
#include <limits>

#include "cof/core/autograd.hpp"

namespace cof::ops {

namespace detail {

// Broadcast plan for a binary op (numpy rules, right-aligned).
struct Broadcast {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;  // per out dim; 0 when broadcast
  bool trivial = false;
};

inline std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.trivial = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw ShapeMismatch("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    p.out[i] = std::max(pa[i], pb[i]);
  }
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  p.stride_a.resize(r);
  p.stride_b.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Visits every output index with the matching input offsets.
template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::int64_t n = numel_of(p.out);
  if (p.trivial) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(p.out.size());
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t ia = p.stride_a[r - 1], ib = p.stride_b[r - 1];
  for (std::int64_t i = 0; i < n; i += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(i + j, oa + j * ia, ob + j * ib);
    // advance outer dims
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      oa += p.stride_a[d];
      ob += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.stride_a[d] * p.out[d];
      ob -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <class T, class Fwd, class DA, class DB>
Var<T> binary(const Var<T>& a, const Var<T>& b, Fwd fwd, DA da, DB db) {
  auto plan = plan_broadcast(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { po[o] = fwd(pa[ia], pb[ib]); });
  return Var<T>::make(std::move(out), {a, b}, [plan, da, db](Node<T>& n) {
    auto& A = *n.parents[0];
    auto& B = *n.parents[1];
    const T* g = n.grad.data();
    const T* va = A.value.data();
    const T* vb = B.value.data();
    if (A.requires_grad) {
      T* ga = A.grad_buffer().data();
      for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { ga[ia] += g[o] * da(va[ia], vb[ib]); });
    }
    if (B.requires_grad) {
      T* gb = B.grad_buffer().data();
      for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { gb[ib] += g[o] * db(va[ia], vb[ib]); });
    }
  });
}

template <class T, class Fwd, class D>
Var<T> unary(const Var<T>& a, Fwd fwd, D d) {
  Tensor<T> out(a.shape());
  const T* pa = a.value().data();
  T* po = out.data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  return Var<T>::make(std::move(out), {a}, [d](Node<T>& node) {
    auto& A = *node.parents[0];
    T* ga = A.grad_buffer().data();
    const T* g = node.grad.data();
    const T* x = A.value.data();
    const T* y = node.value.data();
    const std::size_t n = node.value.size();
    for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * d(x[i], y[i]);
  });
}

}  // namespace detail

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary(a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary(a, [](T x) { return x > 0 ? x : T(0); }, [](T x, T) { return x > 0 ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  return detail::unary(
      a, [slope](T x) { return x > 0 ? x : slope * x; }, [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <class T>
Var<T> abs(const Var<T>& a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); }, [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Tensor<T> out({1}, a.value().sum());
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& A = *n.parents[0];
    const T g = n.grad[0];
    for (auto& v : A.grad_buffer().values()) v += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(1, a.value().size()));
  return scale(sum(a), inv);
}

// Mean binary cross entropy on probabilities, clamped to [eps, 1-eps].
template <class T>
Var<T> bce(const Var<T>& prob, const Tensor<T>& target, T eps = T(1e-7)) {
  prob.value().check_same(target, "bce");
  const std::size_t n = target.size();
  const T* p = prob.value().data();
  const T* y = target.data();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T q = std::clamp(p[i], eps, T(1) - eps);
    acc += -(y[i] * std::log(q) + (T(1) - y[i]) * std::log(T(1) - q));
  }
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(n)));
  return Var<T>::make(std::move(out), {prob}, [target, eps](Node<T>& node) {
    auto& P = *node.parents[0];
    const std::size_t n = target.size();
    const T g = node.grad[0] / static_cast<T>(n);
    T* gp = P.grad_buffer().data();
    const T* p = P.value.data();
    const T* y = target.data();
    for (std::size_t i = 0; i < n; ++i) {
      if (p[i] < eps || p[i] > T(1) - eps) continue;  // clamped region is flat
      gp[i] += g * (p[i] - y[i]) / (p[i] * (T(1) - p[i]));
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    auto& A = *n.parents[0];
    auto& ga = A.grad_buffer();
    const T* g = n.grad.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

namespace detail {
// outer = prod(shape[:axis]), inner = prod(shape[axis+1:])
inline void split_axis(const Shape& s, int axis, std::int64_t& outer, std::int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
}
}  // namespace detail

// Contiguous sub-range [start, start+len) along an axis.
template <class T>
Var<T> slice(const Var<T>& a, int axis, std::int64_t start, std::int64_t len) {
  const Shape& s = a.shape();
  if (axis < 0) axis += a.rank();
  require(axis >= 0 && axis < a.rank(), "slice: axis out of range");
  require(start >= 0 && len >= 0 && start + len <= s[axis], "slice: range out of bounds for " + shape_str(s));
  std::int64_t outer, inner;
  detail::split_axis(s, axis, outer, inner);
  Shape os = s;
  os[axis] = len;
  Tensor<T> out(os);
  const std::int64_t full = s[axis];
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + (o * full + start) * inner, len * inner, out.data() + o * len * inner);
  return Var<T>::make(std::move(out), {a}, [=](Node<T>& n) {
    T* ga = n.parents[0]->grad_buffer().data();
    const T* g = n.grad.data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < len * inner; ++i) ga[(o * full + start) * inner + i] += g[o * len * inner + i];
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  require(!xs.empty(), "concat: empty input");
  Shape s = xs[0].shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  std::int64_t total = 0;
  for (auto& x : xs) {
    Shape t = x.shape();
    if (t.size() != s.size()) throw ShapeMismatch("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && t[i] != s[i])
        throw ShapeMismatch("concat: " + shape_str(t) + " vs " + shape_str(s));
    total += t[axis];
  }
  Shape os = s;
  os[axis] = total;
  std::int64_t outer, inner;
  detail::split_axis(os, axis, outer, inner);
  Tensor<T> out(os);
  std::vector<std::int64_t> lens;
  std::int64_t off = 0;
  for (auto& x : xs) {
    const std::int64_t len = x.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(x.value().data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    lens.push_back(len);
    off += len;
  }
  return Var<T>::make(std::move(out), xs, [=](Node<T>& n) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& P = *n.parents[k];
      const std::int64_t len = lens[k];
      if (P.requires_grad) {
        T* gp = P.grad_buffer().data();
        for (std::int64_t o = 0; o < outer; ++o)
          for (std::int64_t i = 0; i < len * inner; ++i) gp[o * len * inner + i] += n.grad[(o * total + off) * inner + i];
      }
      off += len;
    }
  });
}

// out[b, rest] = sum_k coeff[b,k] * maps[b,k,rest]
template <class T>
Var<T> channel_weighted_sum(const Var<T>& maps, const Var<T>& coeff) {
  const Shape& ms = maps.shape();
  require(maps.rank() >= 2 && coeff.rank() == 2, "channel_weighted_sum: expects maps [B,K,...] and coeff [B,K]");
  const std::int64_t B = ms[0], K = ms[1];
  if (coeff.dim(0) != B || coeff.dim(1) != K)
    throw InvalidInput("channel_weighted_sum: coefficient shape " + shape_str(coeff.shape()) +
                       " does not match feature maps " + shape_str(ms));
  const std::int64_t P = numel_of(ms) / (B * K);
  Shape os{B};
  os.insert(os.end(), ms.begin() + 2, ms.end());
  Tensor<T> out(os);
  const T* m = maps.value().data();
  const T* c = coeff.value().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < K; ++k) {
      const T w = c[b * K + k];
      const T* src = m + (b * K + k) * P;
      T* dst = out.data() + b * P;
      for (std::int64_t p = 0; p < P; ++p) dst[p] += w * src[p];
    }
  return Var<T>::make(std::move(out), {maps, coeff}, [B, K, P](Node<T>& n) {
    auto& M = *n.parents[0];
    auto& C = *n.parents[1];
    const T* g = n.grad.data();
    if (M.requires_grad) {
      T* gm = M.grad_buffer().data();
      const T* c = C.value.data();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t k = 0; k < K; ++k) {
          const T w = c[b * K + k];
          for (std::int64_t p = 0; p < P; ++p) gm[(b * K + k) * P + p] += w * g[b * P + p];
        }
    }
    if (C.requires_grad) {
      T* gc = C.grad_buffer().data();
      const T* m = M.value.data();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t k = 0; k < K; ++k) {
          T acc = 0;
          for (std::int64_t p = 0; p < P; ++p) acc += m[(b * K + k) * P + p] * g[b * P + p];
          gc[b * K + k] += acc;
        }
    }
  });
}

// Max over every axis after the first two: [B,K,...] -> [B,K]. Gradient goes
// to the first maximal element.
template <class T>
Var<T> global_max(const Var<T>& x) {
  const Shape& s = x.shape();
  require(x.rank() >= 3, "global_max: expects [B,K,...], got " + shape_str(s));
  const std::int64_t B = s[0], K = s[1];
  const std::int64_t P = numel_of(s) / (B * K);
  Tensor<T> out({B, K});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(B * K));
  const T* v = x.value().data();
  for (std::int64_t i = 0; i < B * K; ++i) {
    const T* row = v + i * P;
    std::int64_t best = 0;
    for (std::int64_t p = 1; p < P; ++p)
      if (row[p] > row[best]) best = p;
    arg[i] = best;
    out[i] = row[best];
  }
  return Var<T>::make(std::move(out), {x}, [arg = std::move(arg), P](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < arg.size(); ++i) gx[static_cast<std::int64_t>(i) * P + arg[i]] += n.grad[i];
  });
}

// out[b,c,rest] = sum_t w[t] * x[b,c,t,rest]
template <class T>
Var<T> time_weighted_sum(const Var<T>& x, const std::vector<T>& w) {
  const Shape& s = x.shape();
  require(x.rank() >= 3, "time_weighted_sum: expects [B,C,T,...]");
  const std::int64_t BC = s[0] * s[1], Tn = s[2];
  require(static_cast<std::int64_t>(w.size()) == Tn, "time_weighted_sum: weight count must equal T");
  const std::int64_t P = numel_of(s) / (BC * Tn);
  Shape os{s[0], s[1]};
  os.insert(os.end(), s.begin() + 3, s.end());
  Tensor<T> out(os);
  const T* v = x.value().data();
  for (std::int64_t i = 0; i < BC; ++i)
    for (std::int64_t t = 0; t < Tn; ++t)
      for (std::int64_t p = 0; p < P; ++p) out[i * P + p] += w[t] * v[(i * Tn + t) * P + p];
  return Var<T>::make(std::move(out), {x}, [w, BC, Tn, P](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().data();
    for (std::int64_t i = 0; i < BC; ++i)
      for (std::int64_t t = 0; t < Tn; ++t)
        for (std::int64_t p = 0; p < P; ++p) gx[(i * Tn + t) * P + p] += w[t] * n.grad[i * P + p];
  });
}

// Per (b,c) min-max rescale of [B,C,...] to [0,1]; slices whose range is at
// most min_range are treated as constant and map to 0.5.
template <class T>
Var<T> minmax_normalize(const Var<T>& x, T min_range = T(0)) {
  const Shape& s = x.shape();
  require(x.rank() >= 3, "minmax_normalize: expects [B,C,...]");
  const std::int64_t BC = s[0] * s[1];
  const std::int64_t P = numel_of(s) / BC;
  Tensor<T> out(s);
  std::vector<std::int64_t> amin(BC), amax(BC);
  const T* v = x.value().data();
  for (std::int64_t i = 0; i < BC; ++i) {
    const T* row = v + i * P;
    std::int64_t lo = 0, hi = 0;
    for (std::int64_t p = 1; p < P; ++p) {
      if (row[p] < row[lo]) lo = p;
      if (row[p] > row[hi]) hi = p;
    }
    amin[i] = lo;
    amax[i] = hi;
    const T range = row[hi] - row[lo];
    for (std::int64_t p = 0; p < P; ++p) out[i * P + p] = range > min_range ? (row[p] - row[lo]) / range : T(0.5);
  }
  return Var<T>::make(std::move(out), {x}, [amin, amax, BC, P, min_range](Node<T>& n) {
    auto& X = *n.parents[0];
    T* gx = X.grad_buffer().data();
    const T* v = X.value.data();
    for (std::int64_t i = 0; i < BC; ++i) {
      const T* row = v + i * P;
      const T lo = row[amin[i]], range = row[amax[i]] - lo;
      if (!(range > min_range)) continue;
      const T* g = n.grad.data() + i * P;
      const T* y = n.value.data() + i * P;
      // y = (x - lo) / range
      T sum_g = 0, sum_gy = 0;
      for (std::int64_t p = 0; p < P; ++p) {
        gx[i * P + p] += g[p] / range;
        sum_g += g[p];
        sum_gy += g[p] * y[p];
      }
      // d/dlo = -(sum_g - sum_gy)/range ; d/dhi = -sum_gy/range
      gx[i * P + amin[i]] += -(sum_g - sum_gy) / range;
      gx[i * P + amax[i]] += -sum_gy / range;
    }
  });
}

}  // namespace cof::ops
