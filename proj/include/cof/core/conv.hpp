#pragma once

#include <array>

#include <Eigen/Core>

#include "cof/core/ops.hpp"

namespace cof::ops {

struct ConvGeometry {
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> pad{0, 0, 0};
  std::array<std::int64_t, 3> dilation{1, 1, 1};
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct Conv3Dims {
  std::int64_t B, C, D, H, W;     // input
  std::int64_t O, KD, KH, KW;     // kernel
  std::int64_t OD, OH, OW;        // output
  ConvGeometry g;
  std::int64_t ckk() const { return C * KD * KH * KW; }
  std::int64_t plane() const { return OH * OW; }
};

inline std::int64_t out_len(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p, std::int64_t d) {
  return (in + 2 * p - d * (k - 1) - 1) / s + 1;
}

// Columns for a single output depth slice `od` of batch item `b`:
// cols[ckk, OH*OW].
template <class T>
void im2col3(const T* x, const Conv3Dims& c, std::int64_t od, T* cols) {
  const auto& g = c.g;
  const std::int64_t P = c.plane();
  std::int64_t row = 0;
  for (std::int64_t ch = 0; ch < c.C; ++ch)
    for (std::int64_t kd = 0; kd < c.KD; ++kd) {
      const std::int64_t id = od * g.stride[0] - g.pad[0] + kd * g.dilation[0];
      for (std::int64_t kh = 0; kh < c.KH; ++kh)
        for (std::int64_t kw = 0; kw < c.KW; ++kw, ++row) {
          T* dst = cols + row * P;
          if (id < 0 || id >= c.D) {
            std::fill_n(dst, P, T(0));
            continue;
          }
          const T* src = x + (ch * c.D + id) * c.H * c.W;
          for (std::int64_t oy = 0; oy < c.OH; ++oy) {
            const std::int64_t iy = oy * g.stride[1] - g.pad[1] + kh * g.dilation[1];
            T* drow = dst + oy * c.OW;
            if (iy < 0 || iy >= c.H) {
              std::fill_n(drow, c.OW, T(0));
              continue;
            }
            const T* srow = src + iy * c.W;
            const std::int64_t off = kw * g.dilation[2] - g.pad[2];
            if (g.stride[2] == 1) {
              for (std::int64_t ox = 0; ox < c.OW; ++ox) {
                const std::int64_t ix = ox + off;
                drow[ox] = (ix >= 0 && ix < c.W) ? srow[ix] : T(0);
              }
            } else {
              for (std::int64_t ox = 0; ox < c.OW; ++ox) {
                const std::int64_t ix = ox * g.stride[2] + off;
                drow[ox] = (ix >= 0 && ix < c.W) ? srow[ix] : T(0);
              }
            }
          }
        }
    }
}

template <class T>
void col2im3(const T* cols, const Conv3Dims& c, std::int64_t od, T* dx) {
  const auto& g = c.g;
  const std::int64_t P = c.plane();
  std::int64_t row = 0;
  for (std::int64_t ch = 0; ch < c.C; ++ch)
    for (std::int64_t kd = 0; kd < c.KD; ++kd) {
      const std::int64_t id = od * g.stride[0] - g.pad[0] + kd * g.dilation[0];
      for (std::int64_t kh = 0; kh < c.KH; ++kh)
        for (std::int64_t kw = 0; kw < c.KW; ++kw, ++row) {
          if (id < 0 || id >= c.D) continue;
          const T* src = cols + row * P;
          T* dst = dx + (ch * c.D + id) * c.H * c.W;
          for (std::int64_t oy = 0; oy < c.OH; ++oy) {
            const std::int64_t iy = oy * g.stride[1] - g.pad[1] + kh * g.dilation[1];
            if (iy < 0 || iy >= c.H) continue;
            for (std::int64_t ox = 0; ox < c.OW; ++ox) {
              const std::int64_t ix = ox * g.stride[2] - g.pad[2] + kw * g.dilation[2];
              if (ix >= 0 && ix < c.W) dst[iy * c.W + ix] += src[oy * c.OW + ox];
            }
          }
        }
    }
}

template <class T>
bool is_pointwise(const Conv3Dims& c) {
  return c.KD == 1 && c.KH == 1 && c.KW == 1 && c.g.stride == std::array<std::int64_t, 3>{1, 1, 1} &&
         c.g.pad == std::array<std::int64_t, 3>{0, 0, 0};
}

// x: [B,C,D,H,W], w: [O,C,KD,KH,KW], bias: [O] or empty
template <class T>
Var<T> conv3_impl(const Var<T>& x, const Var<T>& w, const Var<T>* bias, Conv3Dims c) {
  const bool pointwise = is_pointwise<T>(c);
  const std::int64_t P = c.plane();
  const std::int64_t CKK = c.ckk();
  Tensor<T> out({c.B, c.O, c.OD, c.OH, c.OW});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(CKK * P));
  CMapMat<T> W(w.value().data(), c.O, CKK);
  const std::int64_t in_vol = c.C * c.D * c.H * c.W;
  for (std::int64_t b = 0; b < c.B; ++b)
    for (std::int64_t od = 0; od < c.OD; ++od) {
      const T* xb = x.value().data() + b * in_vol;
      const T* colp;
      if (pointwise) {
        // rows are channels at depth od: stride D*H*W between rows
        cols.resize(static_cast<std::size_t>(CKK * P));
        for (std::int64_t ch = 0; ch < c.C; ++ch)
          std::copy_n(xb + (ch * c.D + od) * P, P, cols.data() + ch * P);
        colp = cols.data();
      } else {
        im2col3(xb, c, od, cols.data());
        colp = cols.data();
      }
      RowMat<T> res = W * CMapMat<T>(colp, CKK, P);
      for (std::int64_t o = 0; o < c.O; ++o) {
        T* dst = out.data() + ((b * c.O + o) * c.OD + od) * P;
        const T bv = bias ? bias->value()[static_cast<std::size_t>(o)] : T(0);
        for (std::int64_t p = 0; p < P; ++p) dst[p] = res(o, p) + bv;
      }
    }
  std::vector<Var<T>> parents{x, w};
  if (bias) parents.push_back(*bias);
  const bool has_bias = bias != nullptr;
  return Var<T>::make(std::move(out), parents, [c, has_bias](Node<T>& n) {
    auto& X = *n.parents[0];
    auto& Wn = *n.parents[1];
    const std::int64_t P = c.plane();
    const std::int64_t CKK = c.ckk();
    const std::int64_t in_vol = c.C * c.D * c.H * c.W;
    std::vector<T> cols(static_cast<std::size_t>(CKK * P));
    RowMat<T> gslice(c.O, P);
    CMapMat<T> W(Wn.value.data(), c.O, CKK);
    T* gw = Wn.requires_grad ? Wn.grad_buffer().data() : nullptr;
    T* gx = X.requires_grad ? X.grad_buffer().data() : nullptr;
    T* gb = (has_bias && n.parents[2]->requires_grad) ? n.parents[2]->grad_buffer().data() : nullptr;
    const bool pointwise = is_pointwise<T>(c);
    for (std::int64_t b = 0; b < c.B; ++b)
      for (std::int64_t od = 0; od < c.OD; ++od) {
        for (std::int64_t o = 0; o < c.O; ++o) {
          const T* src = n.grad.data() + ((b * c.O + o) * c.OD + od) * P;
          std::copy_n(src, P, gslice.data() + o * P);
          if (gb) {
            T acc = 0;
            for (std::int64_t p = 0; p < P; ++p) acc += src[p];
            gb[o] += acc;
          }
        }
        const T* xb = X.value.data() + b * in_vol;
        if (gw) {
          if (pointwise) {
            for (std::int64_t ch = 0; ch < c.C; ++ch)
              std::copy_n(xb + (ch * c.D + od) * P, P, cols.data() + ch * P);
          } else {
            im2col3(xb, c, od, cols.data());
          }
          MapMat<T>(gw, c.O, CKK).noalias() += gslice * CMapMat<T>(cols.data(), CKK, P).transpose();
        }
        if (gx) {
          MapMat<T> dcols(cols.data(), CKK, P);
          dcols.noalias() = W.transpose() * gslice;
          if (pointwise) {
            for (std::int64_t ch = 0; ch < c.C; ++ch) {
              T* dst = gx + b * in_vol + (ch * c.D + od) * P;
              const T* s = cols.data() + ch * P;
              for (std::int64_t p = 0; p < P; ++p) dst[p] += s[p];
            }
          } else {
            col2im3(cols.data(), c, od, gx + b * in_vol);
          }
        }
      }
  });
}

}  // namespace detail

// x: [B,C,H,W], w: [O,C,KH,KW], bias: [O] (optional)
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, std::int64_t stride, std::int64_t pad,
              std::int64_t dilation = 1) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeMismatch("conv2d: expects 4-d input and weight");
  if (x.dim(1) != w.dim(1))
    throw ShapeMismatch("conv2d: input channels " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
  detail::Conv3Dims c{};
  c.B = x.dim(0);
  c.C = x.dim(1);
  c.D = 1;
  c.H = x.dim(2);
  c.W = x.dim(3);
  c.O = w.dim(0);
  c.KD = 1;
  c.KH = w.dim(2);
  c.KW = w.dim(3);
  c.g.stride = {1, stride, stride};
  c.g.pad = {0, pad, pad};
  c.g.dilation = {1, dilation, dilation};
  c.OD = 1;
  c.OH = detail::out_len(c.H, c.KH, stride, pad, dilation);
  c.OW = detail::out_len(c.W, c.KW, stride, pad, dilation);
  if (c.OH <= 0 || c.OW <= 0) throw InvalidInput("conv2d: input " + shape_str(x.shape()) + " too small");
  auto x5 = reshape(x, {c.B, c.C, 1, c.H, c.W});
  auto w5 = reshape(w, {c.O, c.C, 1, c.KH, c.KW});
  auto y = detail::conv3_impl(x5, w5, bias, c);
  return reshape(y, {c.B, c.O, c.OH, c.OW});
}

// x: [B,C,D,H,W], w: [O,C,KD,KH,KW]
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const ConvGeometry& g) {
  if (x.rank() != 5 || w.rank() != 5) throw ShapeMismatch("conv3d: expects 5-d input and weight");
  if (x.dim(1) != w.dim(1))
    throw ShapeMismatch("conv3d: input channels " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
  detail::Conv3Dims c{};
  c.B = x.dim(0);
  c.C = x.dim(1);
  c.D = x.dim(2);
  c.H = x.dim(3);
  c.W = x.dim(4);
  c.O = w.dim(0);
  c.KD = w.dim(2);
  c.KH = w.dim(3);
  c.KW = w.dim(4);
  c.g = g;
  c.OD = detail::out_len(c.D, c.KD, g.stride[0], g.pad[0], g.dilation[0]);
  c.OH = detail::out_len(c.H, c.KH, g.stride[1], g.pad[1], g.dilation[1]);
  c.OW = detail::out_len(c.W, c.KW, g.stride[2], g.pad[2], g.dilation[2]);
  if (c.OD <= 0 || c.OH <= 0 || c.OW <= 0) throw InvalidInput("conv3d: input " + shape_str(x.shape()) + " too small");
  return detail::conv3_impl(x, w, bias, c);
}

// Max pooling over the last two axes of [B,C,H,W].
template <class T>
Var<T> max_pool2d(const Var<T>& x, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  require(x.rank() == 4, "max_pool2d: expects [B,C,H,W]");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = detail::out_len(H, k, stride, pad, 1), OW = detail::out_len(W, k, stride, pad, 1);
  Tensor<T> out({x.dim(0), x.dim(1), OH, OW});
  std::vector<std::int64_t> arg(out.size());
  const T* v = x.value().data();
  for (std::int64_t i = 0; i < BC; ++i)
    for (std::int64_t oy = 0; oy < OH; ++oy)
      for (std::int64_t ox = 0; ox < OW; ++ox) {
        std::int64_t best = -1;
        T bv = -std::numeric_limits<T>::infinity();
        for (std::int64_t ky = 0; ky < k; ++ky) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t kx = 0; kx < k; ++kx) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const std::int64_t off = (i * H + iy) * W + ix;
            if (best < 0 || v[off] > bv) {
              best = off;
              bv = v[off];
            }
          }
        }
        const std::int64_t o = (i * OH + oy) * OW + ox;
        out[o] = bv;
        arg[o] = best;
      }
  return Var<T>::make(std::move(out), {x}, [arg = std::move(arg)](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().data();
    for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += n.grad[o];
  });
}

// Nearest-neighbour upsampling of the last two axes by an integer factor.
template <class T>
Var<T> upsample_nearest2d(const Var<T>& x, std::int64_t f) {
  require(x.rank() == 4 && f >= 1, "upsample_nearest2d: expects [B,C,H,W] and factor >= 1");
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t OH = H * f, OW = W * f;
  Tensor<T> out({x.dim(0), x.dim(1), OH, OW});
  const T* v = x.value().data();
  for (std::int64_t i = 0; i < BC; ++i)
    for (std::int64_t oy = 0; oy < OH; ++oy)
      for (std::int64_t ox = 0; ox < OW; ++ox) out[(i * OH + oy) * OW + ox] = v[(i * H + oy / f) * W + ox / f];
  return Var<T>::make(std::move(out), {x}, [BC, H, W, f](Node<T>& n) {
    T* gx = n.parents[0]->grad_buffer().data();
    const std::int64_t OH = H * f, OW = W * f;
    for (std::int64_t i = 0; i < BC; ++i)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) gx[(i * H + oy / f) * W + ox / f] += n.grad[(i * OH + oy) * OW + ox];
  });
}

// Batch normalisation over every axis except 1. In training mode batch
// statistics are used and written back into running_mean/running_var.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  require(x.rank() >= 2, "batch_norm: expects [B,C,...]");
  const std::int64_t B = x.dim(0), C = x.dim(1);
  const std::int64_t P = numel_of(x.shape()) / (B * C);
  const std::int64_t M = B * P;
  std::vector<T> mean(C), invstd(C);
  const T* v = x.value().data();
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* row = v + (b * C + c) * P;
        for (std::int64_t p = 0; p < P; ++p) s += row[p];
      }
      const double mu = s / static_cast<double>(M);
      for (std::int64_t b = 0; b < B; ++b) {
        const T* row = v + (b * C + c) * P;
        for (std::int64_t p = 0; p < P; ++p) ss += (row[p] - mu) * (row[p] - mu);
      }
      const double var = ss / static_cast<double>(M);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
      running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * static_cast<T>(mu);
      running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(unbiased);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      invstd[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(x.shape());
  const T* ga = gamma.value().data();
  const T* be = beta.value().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* row = v + (b * C + c) * P;
      T* dst = out.data() + (b * C + c) * P;
      const T a = ga[c] * invstd[c];
      const T sh = be[c] - mean[c] * a;
      for (std::int64_t p = 0; p < P; ++p) dst[p] = row[p] * a + sh;
    }
  return Var<T>::make(std::move(out), {x, gamma, beta}, [=](Node<T>& n) {
    auto& X = *n.parents[0];
    auto& G = *n.parents[1];
    auto& Bt = *n.parents[2];
    const T* v = X.value.data();
    const T* g = n.grad.data();
    for (std::int64_t c = 0; c < C; ++c) {
      T sum_g = 0, sum_gx = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* row = v + (b * C + c) * P;
        const T* gr = g + (b * C + c) * P;
        for (std::int64_t p = 0; p < P; ++p) {
          sum_g += gr[p];
          sum_gx += gr[p] * (row[p] - mean[c]) * invstd[c];
        }
      }
      if (G.requires_grad) G.grad_buffer()[c] += sum_gx;
      if (Bt.requires_grad) Bt.grad_buffer()[c] += sum_g;
      if (!X.requires_grad) continue;
      T* gx = X.grad_buffer().data();
      const T gam = G.value[c];
      for (std::int64_t b = 0; b < B; ++b) {
        const T* row = v + (b * C + c) * P;
        const T* gr = g + (b * C + c) * P;
        T* dst = gx + (b * C + c) * P;
        if (training) {
          const T k = gam * invstd[c] / static_cast<T>(M);
          for (std::int64_t p = 0; p < P; ++p) {
            const T xh = (row[p] - mean[c]) * invstd[c];
            dst[p] += k * (static_cast<T>(M) * gr[p] - sum_g - xh * sum_gx);
          }
        } else {
          const T k = gam * invstd[c];
          for (std::int64_t p = 0; p < P; ++p) dst[p] += k * gr[p];
        }
      }
    }
  });
}

}  // namespace cof::ops
