#include <cmath>

#include <gtest/gtest.h>

#include "mocc/layers.hpp"

using namespace mocc;

namespace {

Tensor<float> random_tensor(Shape shape, Rng &rng) {
  Tensor<float> t(std::move(shape));
  for (auto &v : t.values())
    v = static_cast<float>(rng.normal());
  return t;
}

} // namespace

TEST(Conv2d, AllOnesKernelSumsNeighbourhood) {
  Tensor<float> x({1, 1, 3, 3}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<float> k({1, 1, 3, 3}, 1.0f);
  Tensor<float> bias({1}, 0.0f);
  auto y = conv2d_forward(x, k, bias);
  EXPECT_FLOAT_EQ(y.at(0, 0, 1, 1), 45.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 0, 0), 12.0f);
  EXPECT_FLOAT_EQ(y.at(0, 0, 2, 2), 28.0f);
}

TEST(Conv2d, CenterTapIsIdentity) {
  Rng rng(5);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  Tensor<float> k({3, 3, 3, 3});
  for (std::size_t c = 0; c < 3; ++c)
    k.at(c, c, 1, 1) = 1.0f;
  EXPECT_EQ(conv2d_forward(x, k, Tensor<float>()), x);
}

TEST(Conv2d, ZeroInputGivesZero) {
  Rng rng(6);
  auto k = random_tensor({4, 2, 3, 3}, rng);
  auto y = conv2d_forward(Tensor<float>({1, 2, 5, 5}), k, Tensor<float>({4}));
  for (float v : y.values())
    EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, ChannelMismatchThrows) {
  EXPECT_THROW(conv2d_forward(Tensor<float>({1, 2, 4, 4}), Tensor<float>({1, 3, 3, 3}),
                              Tensor<float>()),
               DimensionError);
}

TEST(Conv2d, LinearInInput) {
  Rng rng(7);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto y = random_tensor({2, 3, 8, 8}, rng);
  const float a = 0.7f, b = -1.3f;
  Tensor<float> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i)
    mix[i] = a * x[i] + b * y[i];
  auto lhs = conv2d_forward(mix, k, Tensor<float>());
  auto cx = conv2d_forward(x, k, Tensor<float>());
  auto cy = conv2d_forward(y, k, Tensor<float>());
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const float rhs = a * cx[i] + b * cy[i];
    EXPECT_NEAR(lhs[i], rhs, 1e-5f * std::max(1.0f, std::abs(rhs)));
  }
}

TEST(BatchNorm, TwoValuesNormalizeToPlusMinusOne) {
  Tensor<float> x({2, 1, 1, 1}, std::vector<float>{0.0f, 2.0f});
  Tensor<float> gamma({1}, 1.0f), beta({1}, 0.0f);
  auto stats = RunningStats<float>::fresh(1);
  auto y = batchnorm2d_forward(x, gamma, beta, stats, Mode::train);
  EXPECT_NEAR(y[0], -1.0f, 1e-3f);
  EXPECT_NEAR(y[1], 1.0f, 1e-3f);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  Tensor<float> x({3, 1, 2, 2}, 4.2f);
  Tensor<float> gamma({1}, 2.5f), beta({1}, -0.75f);
  auto stats = RunningStats<float>::fresh(1);
  auto y = batchnorm2d_forward(x, gamma, beta, stats, Mode::train);
  for (float v : y.values())
    EXPECT_FLOAT_EQ(v, -0.75f);
}

TEST(BatchNorm, RunningStatsUpdate) {
  Tensor<double> x({2, 1, 1, 1}, std::vector<double>{0.0, 2.0});
  Tensor<double> gamma({1}, 1.0), beta({1}, 0.0);
  auto stats = RunningStats<double>::fresh(1);
  batchnorm2d_forward(x, gamma, beta, stats, Mode::train);
  // mean 1, unbiased variance 2
  EXPECT_NEAR(stats.mean[0], 0.1, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 + 0.2, 1e-12);
}

TEST(BatchNorm, EvalWithoutStatsIsStateError) {
  Tensor<float> gamma({1}, 1.0f), beta({1}, 0.0f);
  RunningStats<float> stats;
  EXPECT_THROW(batchnorm2d_forward(Tensor<float>({1, 1, 2, 2}), gamma, beta, stats, Mode::eval),
               StateError);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  Tensor<float> x({1, 1, 1, 2}, std::vector<float>{3.0f, 5.0f});
  Tensor<float> gamma({1}, 2.0f), beta({1}, 1.0f);
  RunningStats<float> stats{Tensor<float>({1}, 1.0f), Tensor<float>({1}, 4.0f)};
  auto y = batchnorm2d_eval(x, gamma, beta, stats);
  EXPECT_NEAR(y[0], 2.0f * 2.0f / std::sqrt(4.0f + 1e-5f) + 1.0f, 1e-5f);
  EXPECT_NEAR(y[1], 2.0f * 4.0f / std::sqrt(4.0f + 1e-5f) + 1.0f, 1e-5f);
}

TEST(MaxPool, PicksWindowMaxima) {
  Tensor<float> x({1, 1, 2, 4}, std::vector<float>{1, 5, 2, 2, 3, 4, 2, 2});
  MaxPoolContext<float> ctx;
  auto y = maxpool2d_forward(x, &ctx);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_FLOAT_EQ(y[0], 5.0f);
  EXPECT_FLOAT_EQ(y[1], 2.0f);
  // Tie in the second window: the first index in scan order wins.
  auto g = maxpool2d_backward(Tensor<float>({1, 1, 1, 2}, std::vector<float>{1, 1}),
                              std::move(ctx));
  EXPECT_EQ(g.storage(), (std::vector<float>{0, 1, 1, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, OddExtentThrows) {
  EXPECT_THROW(maxpool2d_forward(Tensor<float>({1, 1, 3, 4})), DimensionError);
}

TEST(MaxPool, BackwardConservesMass) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({2, 3, 8, 6}, rng);
    MaxPoolContext<float> ctx;
    auto y = maxpool2d_forward(x, &ctx);
    auto g = random_tensor(y.shape(), rng);
    auto gi = maxpool2d_backward(g, std::move(ctx));
    EXPECT_NEAR(gi.sum(), g.sum(), 1e-4);
  }
}

TEST(Dropout, MonteCarloMeanIsOne) {
  Rng rng(13);
  Tensor<float> ones({1000}, 1.0f);
  Tensor<double> mean({1000});
  const int masks = 10000;
  for (int m = 0; m < masks; ++m) {
    auto y = dropout_forward(ones, 0.5, Mode::train, rng);
    for (std::size_t i = 0; i < y.size(); ++i)
      mean[i] += y[i];
  }
  double grand = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double m = mean[i] / masks;
    EXPECT_NEAR(m, 1.0, 0.05);
    grand += m;
  }
  EXPECT_NEAR(grand / 1000.0, 1.0, 0.01);
}

TEST(Dropout, EvalIsBitwiseIdentity) {
  Rng rng(17);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  const Rng before = rng;
  EXPECT_EQ(dropout_forward(x, 0.4, Mode::eval, rng), x);
  EXPECT_EQ(rng, before);
}

TEST(Dropout, SameRngStateIsReproducible) {
  Rng seed_rng(19);
  auto x = random_tensor({2, 3, 4, 4}, seed_rng);
  Rng a(99), b(99);
  EXPECT_EQ(dropout_forward(x, 0.3, Mode::train, a), dropout_forward(x, 0.3, Mode::train, b));
}

TEST(Dropout, RateOutOfRangeThrows) {
  Rng rng(1);
  Tensor<float> x({4}, 1.0f);
  EXPECT_THROW(dropout_forward(x, 1.0, Mode::train, rng), ParameterError);
  EXPECT_THROW(dropout_forward(x, -0.1, Mode::train, rng), ParameterError);
}

TEST(Dropout, BackwardAppliesMask) {
  Rng rng(23);
  Tensor<float> x({50}, 2.0f);
  DropoutContext<float> ctx;
  auto y = dropout_forward(x, 0.5, Mode::train, rng, &ctx);
  auto g = dropout_backward(Tensor<float>({50}, 1.0f), std::move(ctx));
  for (std::size_t i = 0; i < 50; ++i)
    EXPECT_FLOAT_EQ(g[i] * 2.0f, y[i]);
}

TEST(Activation, Relu) {
  Tensor<float> x({3}, std::vector<float>{-1, 0, 2});
  EXPECT_EQ(activation_forward(x, Activation::relu).storage(), (std::vector<float>{0, 0, 2}));
}

TEST(Activation, SigmoidAtZero) {
  Tensor<float> x({1}, 0.0f);
  EXPECT_FLOAT_EQ(activation_forward(x, Activation::sigmoid)[0], 0.5f);
}

TEST(Activation, ReluBackward) {
  Tensor<float> x({2}, std::vector<float>{-1, 2});
  ActivationContext<float> ctx;
  activation_forward(x, Activation::relu, &ctx);
  auto g = activation_backward(Tensor<float>({2}, 5.0f), std::move(ctx));
  EXPECT_EQ(g.storage(), (std::vector<float>{0, 5}));
}

TEST(Upsample, ReplicatesBlocks) {
  Tensor<float> x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  auto y = upsample2x_forward(x);
  EXPECT_EQ(y.storage(),
            (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, BackwardSumsBlocks) {
  auto g = upsample2x_backward(Tensor<float>({1, 1, 4, 4}, 1.0f));
  EXPECT_EQ(g.shape(), (Shape{1, 1, 2, 2}));
  for (float v : g.values())
    EXPECT_FLOAT_EQ(v, 4.0f);
}

TEST(Upsample, SinglePixel) {
  auto y = upsample2x_forward(Tensor<float>({1, 1, 1, 1}, 7.0f));
  EXPECT_EQ(y.storage(), (std::vector<float>{7, 7, 7, 7}));
}
