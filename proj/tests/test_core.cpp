#include <gtest/gtest.h>

#include "cof/core/optim.hpp"
#include "gradcheck.hpp"

using namespace cof;
using D = double;

namespace {

Var<D> param(Shape s, Rng& rng, double scale = 1.0) { return Var<D>(randn<D>(std::move(s), rng, scale), true); }

}  // namespace

TEST(Broadcast, AddAndMulFollowNumpyRules) {
  Var<D> a(Tensor<D>({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var<D> b(Tensor<D>({3}, {10, 20, 30}));
  auto c = ops::add(a, b);
  EXPECT_EQ(c.value().storage(), (std::vector<D>{11, 22, 33, 14, 25, 36}));
  Var<D> col(Tensor<D>({2, 1}, {2, 3}));
  auto d = ops::mul(a, col);
  EXPECT_EQ(d.value().storage(), (std::vector<D>{2, 4, 6, 12, 15, 18}));
  EXPECT_THROW(ops::add(a, Var<D>(Tensor<D>({2}))), ShapeMismatch);
}

TEST(GradCheck, ElementwiseAndBroadcast) {
  Rng rng(1);
  auto a = param({2, 3, 4}, rng), b = param({3, 1}, rng);
  testing_util::expect_gradients_match<D>({a, b}, [&] {
    auto y = ops::mul(ops::sigmoid(ops::add(a, b)), ops::leaky_relu(a, D(0.1)));
    return ops::sum(ops::mul(y, y));
  });
}

TEST(GradCheck, Conv2dStridedDilated) {
  Rng rng(2);
  auto x = param({2, 3, 7, 6}, rng), w = param({4, 3, 3, 3}, rng, 0.3), b = param({4}, rng);
  testing_util::expect_gradients_match<D>({x, w, b}, [&] {
    auto y = ops::conv2d(x, w, &b, 2, 2, 2);
    return ops::sum(ops::mul(y, y));
  });
}

TEST(GradCheck, Conv3dAndPointwise) {
  Rng rng(3);
  auto x = param({1, 2, 5, 4, 4}, rng), w = param({3, 2, 3, 3, 3}, rng, 0.3), b = param({3}, rng);
  ops::ConvGeometry g;
  g.stride = {2, 1, 2};
  g.pad = {1, 1, 1};
  testing_util::expect_gradients_match<D>({x, w, b}, [&] {
    auto y = ops::conv3d(x, w, &b, g);
    return ops::sum(ops::mul(y, y));
  });
  auto w1 = param({5, 2, 1, 1, 1}, rng);
  testing_util::expect_gradients_match<D>({x, w1}, [&] {
    auto y = ops::conv3d(x, w1, static_cast<const Var<D>*>(nullptr), ops::ConvGeometry{});
    return ops::sum(ops::mul(y, y));
  });
}

TEST(Conv, MatchesDirectLoop) {
  Rng rng(4);
  auto x = randn<D>({1, 2, 6, 5}, rng), w = randn<D>({3, 2, 3, 3}, rng);
  auto y = ops::conv2d(Var<D>(x), Var<D>(w), static_cast<const Var<D>*>(nullptr), 1, 1).value();
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 5; ++j) {
        D acc = 0;
        for (int c = 0; c < 2; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int ii = i + ki - 1, jj = j + kj - 1;
              if (ii >= 0 && ii < 6 && jj >= 0 && jj < 5) acc += x.at(0, c, ii, jj) * w.at(o, c, ki, kj);
            }
        EXPECT_NEAR(y.at(0, o, i, j), acc, 1e-12);
      }
}

TEST(GradCheck, PoolUpsampleConcatSlice) {
  Rng rng(5);
  auto x = param({2, 2, 6, 6}, rng), y = param({2, 1, 3, 3}, rng);
  testing_util::expect_gradients_match<D>({x, y}, [&] {
    auto p = ops::max_pool2d(x, 3, 2, 1);
    auto u = ops::upsample_nearest2d(ops::concat<D>({p, y}, 1), 2);
    auto s = ops::slice(u, 1, 1, 2);
    return ops::sum(ops::mul(s, s));
  });
}

TEST(GradCheck, BatchNormTrainingMode) {
  Rng rng(6);
  auto x = param({3, 2, 4, 4}, rng), g = param({2}, rng), b = param({2}, rng);
  Tensor<D> rm = Tensor<D>::zeros({2}), rv = Tensor<D>::ones({2});
  auto w = randn<D>({3, 2, 4, 4}, rng);
  testing_util::expect_gradients_match<D>({x, g, b}, [&] {
    auto y = ops::batch_norm(x, g, b, rm, rv, true);
    return ops::sum(ops::mul(y, Var<D>(w)));
  });
}

TEST(GradCheck, MinMaxNormalizeAndTimeSum) {
  Rng rng(7);
  auto x = param({1, 2, 3, 4, 4}, rng);
  const std::vector<D> wt{-0.8, 0.1, 0.7};
  auto r = randn<D>({1, 2, 4, 4}, rng);
  testing_util::expect_gradients_match<D>({x}, [&] {
    auto y = ops::minmax_normalize(ops::time_weighted_sum(x, wt));
    return ops::sum(ops::mul(y, Var<D>(r)));
  });
}

TEST(NoGrad, GuardSkipsGraphRecording) {
  Rng rng(8);
  auto a = param({3}, rng);
  {
    NoGradGuard g;
    auto y = ops::sigmoid(a);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(ops::sigmoid(a).requires_grad());
}

TEST(Optim, SgdMatchesHandWrittenUpdate) {
  Var<D> theta(Tensor<D>({1}, 0.7), true);
  optim::Sgd<D> opt({{"p", {{"theta", theta}}, 0.05}}, 0.9, 1e-4);
  double th = 0.7, v = 0.0;
  for (int it = 0; it < 5; ++it) {
    opt.zero_grad();
    auto loss = ops::mul(theta, theta);  // grad = 2 theta
    backward(loss);
    const double g = 2 * th;
    v = 0.9 * v + g + 1e-4 * th;
    th -= 0.05 * v;
    opt.step();
    EXPECT_NEAR(theta.value()[0], th, 1e-12);
  }
}

TEST(Optim, StepScheduleDecaysByFactorTen) {
  optim::StepSchedule s{10.0, 1600};
  EXPECT_DOUBLE_EQ(s.multiplier(0), 1.0);
  EXPECT_DOUBLE_EQ(s.multiplier(1599), 1.0);
  EXPECT_DOUBLE_EQ(s.multiplier(1700), 0.1);
  EXPECT_DOUBLE_EQ(s.multiplier(3300), 0.01);
}

TEST(Optim, AdamReducesQuadratic) {
  Var<D> theta(Tensor<D>({2}, {3.0, -2.0}), true);
  optim::Adam<D> opt({{"p", {{"theta", theta}}, 0.1}});
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    backward(ops::sum(ops::mul(theta, theta)));
    opt.step();
  }
  EXPECT_LT(std::abs(theta.value()[0]), 0.05);
  EXPECT_LT(std::abs(theta.value()[1]), 0.05);
}
