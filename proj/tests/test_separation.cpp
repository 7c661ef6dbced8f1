#include <gtest/gtest.h>

#include <cmath>

#include "cof/separation/model.hpp"
#include "gradcheck.hpp"

using namespace cof;
using namespace cof::separation;
using D = double;

namespace {

// g[b,h,w] = sum_k alpha_k z[b,k] S[b,k,h,w] + beta, written as a plain loop.
Tensor<D> separator_by_loop(const Tensor<D>& z, const Tensor<D>& S, const Tensor<D>& alpha, D beta) {
  const auto B = S.dim(0), K = S.dim(1), H = S.dim(2), W = S.dim(3);
  Tensor<D> g({B, H, W}, beta);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t p = 0; p < H * W; ++p)
        g[b * H * W + p] += alpha[k] * z[b * K + k] * S[(b * K + k) * H * W + p];
  return g;
}

struct OfInstance {
  std::vector<Var<D>> z, g, F;
};

OfInstance random_of(std::size_t N, std::int64_t B, std::int64_t K, std::int64_t H, std::int64_t W, Rng& rng) {
  OfInstance in;
  for (std::size_t n = 0; n < N; ++n) {
    in.z.emplace_back(randn<D>({B, K}, rng), true);
    in.g.emplace_back(randn<D>({B, H, W}, rng), true);
    in.F.emplace_back(randn<D>({B, K, H, W}, rng), true);
  }
  return in;
}

ModelConfig tiny_model(int stages) {
  ModelConfig c;
  c.K = 4;
  c.stages = stages;
  c.backbone = {{4, 4, 8, 8}, 1};
  c.unet = {3, 4, 4};
  c.rows = 16;
  c.frames = 16;
  return c;
}

}  // namespace

TEST(Combiner, HoldsKPlusOneScalars) {
  Rng rng(1);
  AffineCombiner<float> w(16, rng);
  EXPECT_EQ(w.parameter_count(), 17);
  EXPECT_EQ(w.named_parameters().size(), 2u);
}

TEST(Separator, MatchesLoopOracle) {
  Rng rng(2);
  AffineCombiner<D> w(5, rng);
  w.beta().mutable_value()[0] = 0.3;
  Var<D> z(randn<D>({3, 5}, rng)), S(randn<D>({3, 5, 4, 6}, rng));
  auto g = sound_separator(z, S, w);
  auto ref = separator_by_loop(z.value(), S.value(), w.alpha().value(), 0.3);
  ASSERT_EQ(g.shape(), ref.shape());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(g.value()[i], ref[i], 1e-12);
}

TEST(Separator, RejectsChannelMismatch) {
  Rng rng(3);
  AffineCombiner<D> w(4, rng);
  EXPECT_THROW(sound_separator(Var<D>(randn<D>({1, 3}, rng)), Var<D>(randn<D>({1, 4, 2, 2}, rng)), w), InvalidInput);
  EXPECT_THROW(sound_separator(Var<D>(randn<D>({1, 4}, rng)), Var<D>(randn<D>({1, 3, 2, 2}, rng)), w), InvalidInput);
}

TEST(Binarize, ThresholdsAtZero) {
  Tensor<D> g({1, 1, 4}, std::vector<D>{-1.0, 0.0, 1e-9, 2.0});
  Tensor<D> x({1, 1, 4}, std::vector<D>{3.0, 4.0, 5.0, 6.0});
  auto [b, y] = binarize(g, x);
  EXPECT_EQ(b[0], 0.0);
  EXPECT_EQ(b[1], 0.0);
  EXPECT_EQ(b[2], 1.0);
  EXPECT_EQ(b[3], 1.0);
  EXPECT_EQ(y[2], 5.0);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_THROW(binarize(g, Tensor<D>({1, 4})), InvalidInput);
}

TEST(OpponentFilter, ConservesMaskSum) {
  Rng rng(4);
  for (std::size_t N : {2u, 3u, 4u})
    for (int rep = 0; rep < 20; ++rep) {
      AffineCombiner<D> w(3, rng);
      w.beta().mutable_value()[0] = normal(rng);
      auto in = random_of(N, 2, 3, 3, 5, rng);
      auto out = opponent_filter(in.z, in.g, in.F, w);
      for (std::size_t i = 0; i < out[0].value().size(); ++i) {
        D before = 0, after = 0, scale = 0;
        for (std::size_t n = 0; n < N; ++n) {
          before += in.g[n].value()[i];
          after += out[n].value()[i];
          scale += std::abs(out[n].value()[i]);
        }
        EXPECT_NEAR(before, after, 1e-9 * std::max<D>(1, scale));
      }
    }
}

TEST(OpponentFilter, MatchesPairLoopForTwoSources) {
  Rng rng(5);
  AffineCombiner<D> w(3, rng);
  auto in = random_of(2, 1, 3, 2, 2, rng);
  auto out = opponent_filter(in.z, in.g, in.F, w);
  const D beta = w.beta().value()[0];
  auto r10 = separator_by_loop(in.z[0].value(), in.F[1].value(), w.alpha().value(), beta);
  auto r01 = separator_by_loop(in.z[1].value(), in.F[0].value(), w.alpha().value(), beta);
  for (std::size_t i = 0; i < r10.size(); ++i) {
    EXPECT_NEAR(out[0].value()[i], in.g[0].value()[i] + r10[i] - r01[i], 1e-12);
    EXPECT_NEAR(out[1].value()[i], in.g[1].value()[i] - r10[i] + r01[i], 1e-12);
  }
}

TEST(OpponentFilter, SwappingSourcesSwapsOutputs) {
  Rng rng(6);
  AffineCombiner<D> w(3, rng);
  auto in = random_of(2, 1, 3, 2, 3, rng);
  auto a = opponent_filter(in.z, in.g, in.F, w);
  auto b = opponent_filter<D>({in.z[1], in.z[0]}, {in.g[1], in.g[0]}, {in.F[1], in.F[0]}, w);
  for (std::size_t i = 0; i < a[0].value().size(); ++i) {
    EXPECT_NEAR(a[0].value()[i], b[1].value()[i], 1e-12);
    EXPECT_NEAR(a[1].value()[i], b[0].value()[i], 1e-12);
  }
}

TEST(OpponentFilter, RejectsSingleSource) {
  Rng rng(7);
  AffineCombiner<D> w(3, rng);
  auto in = random_of(1, 1, 3, 2, 2, rng);
  EXPECT_THROW(opponent_filter(in.z, in.g, in.F, w), InvalidInput);
}

TEST(UNet, ShapesAcrossGridSizes) {
  Rng rng(8);
  for (std::int64_t s : {64, 128, 256}) {
    sound::UNet<float> net(s, s, 4, {0, 2, 4}, rng);
    EXPECT_EQ(net.levels(), std::min(7, static_cast<int>(std::log2(s)) - 1));
    auto y = net.forward(Var<float>(rand_uniform<float>({1, 1, s, s}, rng)));
    EXPECT_EQ(y.shape(), (Shape{1, 4, s, s}));
  }
}

TEST(UNet, RejectsIndivisibleGrid) {
  Rng rng(9);
  sound::UNet<float> net(64, 64, 4, {0, 2, 4}, rng);
  EXPECT_THROW(net.forward(Var<float>(Tensor<float>({1, 1, 60, 64}))), InvalidInput);
  EXPECT_THROW(sound::UNet<float>(48, 48, 4, {5, 2, 4}, rng), InvalidInput);
}

TEST(Model, OneStageEqualsSeparator) {
  Rng rng(10);
  CofModel<float> m(tiny_model(2), rng);
  m.set_training(false);
  NoGradGuard ng;
  Tensor<float> mix = rand_uniform<float>({1, 16, 16}, rng);
  std::vector<vision::Clip<float>> clips{{Var<float>(rand_uniform<float>({1, 3, 4, 32, 32}, rng)), {}},
                                         {Var<float>(rand_uniform<float>({1, 3, 4, 32, 32}, rng)), {}}};
  auto out1 = m.forward(mix, clips, 1);
  auto out2 = m.forward(mix, clips);
  ASSERT_EQ(out1.size(), 1u);
  ASSERT_EQ(out2.size(), 2u);
  auto& st = m.stage(0);
  auto S = st.sound().forward(Var<float>(sound::compress(mix).reshaped({1, 1, 16, 16})));
  for (std::size_t n = 0; n < 2; ++n) {
    auto z = st.vision().vector(clips[n]);
    auto g = sound_separator(z, S, st.combiner());
    for (std::size_t i = 0; i < g.value().size(); ++i) {
      EXPECT_NEAR(out1[0].g[n].value()[i], g.value()[i], 1e-4);
      EXPECT_EQ(out1[0].g[n].value()[i], out2[0].g[n].value()[i]);
    }
  }
  EXPECT_THROW(m.forward(mix, clips, 3), InvalidInput);
}

TEST(Model, SwappingClipsSwapsMasks) {
  Rng rng(11);
  CofModel<float> m(tiny_model(2), rng);
  m.set_training(false);
  NoGradGuard ng;
  Tensor<float> mix = rand_uniform<float>({1, 16, 16}, rng);
  vision::Clip<float> a{Var<float>(rand_uniform<float>({1, 3, 4, 32, 32}, rng)), {}};
  vision::Clip<float> b{Var<float>(rand_uniform<float>({1, 3, 4, 32, 32}, rng)), {}};
  auto x = m.forward(mix, {a, b});
  auto y = m.forward(mix, {b, a});
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < x[j].g[0].value().size(); ++i) {
      EXPECT_NEAR(x[j].g[0].value()[i], y[j].g[1].value()[i], 1e-4);
      EXPECT_NEAR(x[j].g[1].value()[i], y[j].g[0].value()[i], 1e-4);
    }
}

TEST(Model, PerPairCombinersAndGridCheck) {
  Rng rng(12);
  auto cfg = tiny_model(2);
  cfg.per_pair_combiners = true;
  CofModel<float> m(cfg, rng);
  EXPECT_EQ(m.stage(0).combiner_count(), 1u);
  EXPECT_EQ(m.stage(1).combiner_count(), 2u);
  std::vector<vision::Clip<float>> clips(2, {Var<float>(Tensor<float>({1, 3, 4, 32, 32})), {}});
  EXPECT_THROW(m.forward(Tensor<float>({1, 8, 16}), clips), InvalidInput);
}

TEST(GradCheck, SoundSeparator) {
  Rng rng(13);
  AffineCombiner<D> w(3, rng);
  Var<D> z(randn<D>({2, 3}, rng), true), S(randn<D>({2, 3, 2, 3}, rng), true);
  Tensor<D> wts = randn<D>({2, 2, 3}, rng);
  testing_util::expect_gradients_match<D>({z, S, w.alpha(), w.beta()}, [&] {
    return ops::sum(ops::mul(sound_separator(z, S, w), Var<D>(wts)));
  });
}

TEST(GradCheck, OpponentFilter) {
  Rng rng(14);
  AffineCombiner<D> w(2, rng);
  auto in = random_of(3, 1, 2, 2, 2, rng);
  std::vector<Tensor<D>> wts;
  for (int n = 0; n < 3; ++n) wts.push_back(randn<D>({1, 2, 2}, rng));
  std::vector<Var<D>> inputs{w.alpha(), w.beta()};
  for (int n = 0; n < 3; ++n) {
    inputs.push_back(in.z[n]);
    inputs.push_back(in.F[n]);
  }
  testing_util::expect_gradients_match<D>(inputs, [&] {
    auto g = opponent_filter(in.z, in.g, in.F, w);
    Var<D> acc = ops::sum(ops::mul(g[0], Var<D>(wts[0])));
    for (int n = 1; n < 3; ++n) acc = ops::add(acc, ops::sum(ops::mul(g[n], Var<D>(wts[n]))));
    return acc;
  });
}
