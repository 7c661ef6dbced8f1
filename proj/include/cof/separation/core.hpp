#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "cof/core/nn.hpp"

namespace cof::separation {

// g = sum_k alpha_k z_k S_k + beta. Holds exactly K + 1 scalars.
template <class T>
class AffineCombiner : public nn::Module<T> {
 public:
  AffineCombiner(std::int64_t K, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(K));
    alpha_ = this->add_parameter("alpha", rand_uniform<T>({K}, rng, -bound, bound));
    beta_ = this->add_parameter("beta", Tensor<T>::zeros({1}));
  }

  std::int64_t channels() const { return alpha_.dim(0); }
  Var<T>& alpha() { return alpha_; }
  Var<T>& beta() { return beta_; }
  const Var<T>& alpha() const { return alpha_; }
  const Var<T>& beta() const { return beta_; }

 private:
  Var<T> alpha_, beta_;
};

// z: [B,K], S: [B,K,H,W] -> g: [B,H,W]
template <class T>
Var<T> sound_separator(const Var<T>& z, const Var<T>& S, const AffineCombiner<T>& w) {
  const std::int64_t K = w.channels();
  if (z.rank() != 2 || z.dim(1) != K)
    throw InvalidInput("separator: visual vector " + shape_str(z.shape()) + " does not have K=" + std::to_string(K));
  if (S.rank() < 3 || S.dim(1) != K || S.dim(0) != z.dim(0))
    throw InvalidInput("separator: sound features " + shape_str(S.shape()) + " incompatible with K=" +
                       std::to_string(K) + " and batch " + std::to_string(z.dim(0)));
  auto coeff = ops::mul(z, w.alpha());
  return ops::add(ops::channel_weighted_sum(S, coeff), w.beta());
}

// Hard mask b = [g > 0] and the masked mixture Y = b * x.
template <class T>
std::pair<Tensor<T>, Tensor<T>> binarize(const Tensor<T>& g, const Tensor<T>& x_mix) {
  if (g.shape() != x_mix.shape())
    throw InvalidInput("binarize: mask " + shape_str(g.shape()) + " vs mixture " + shape_str(x_mix.shape()));
  Tensor<T> b(g.shape()), y(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    b[i] = g[i] > T(0) ? T(1) : T(0);
    y[i] = b[i] * x_mix[i];
  }
  return {std::move(b), std::move(y)};
}

// Moves residual mass between masks. For each ordered pair (n, m), n != m,
// r = separator(z_n, F_m) is taken from g_m and given to g_n, in the loop
// order n = 0..N-1 (outer), m = 0..N-1 (inner). `combiner(n, m)` returns the
// weights used for that pair.
template <class T, class CombinerFor>
std::vector<Var<T>> opponent_filter_with(const std::vector<Var<T>>& z, const std::vector<Var<T>>& g_prev,
                                         const std::vector<Var<T>>& F, CombinerFor&& combiner) {
  const std::size_t N = g_prev.size();
  if (N < 2) throw InvalidInput("opponent filter needs at least 2 sources");
  if (z.size() != N || F.size() != N) throw InvalidInput("opponent filter: source counts disagree");
  std::vector<Var<T>> g = g_prev;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < N; ++m) {
      if (m == n) continue;
      auto r = sound_separator(z[n], F[m], combiner(n, m));
      g[m] = ops::sub(g[m], r);
      g[n] = ops::add(g[n], r);
    }
  return g;
}

template <class T>
std::vector<Var<T>> opponent_filter(const std::vector<Var<T>>& z, const std::vector<Var<T>>& g_prev,
                                    const std::vector<Var<T>>& F, const AffineCombiner<T>& w) {
  return opponent_filter_with<T>(z, g_prev, F, [&](std::size_t, std::size_t) -> const AffineCombiner<T>& { return w; });
}

}  // namespace cof::separation
