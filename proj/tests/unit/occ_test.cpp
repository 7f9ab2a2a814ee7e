#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "mocc/data.hpp"
#include "mocc/occ.hpp"

using namespace mocc;

namespace {

// One-block network on 2x2 single-channel inputs whose unimodal embedding is
// forced to `beta` regardless of the input: zero kernels and zero gamma leave
// batch norm emitting beta, which ReLU and pooling pass through.
OccModel stub_model(const std::vector<float> &beta, float tau) {
  ArchConfig arch;
  arch.input_size = 2;
  arch.in_channels = 1;
  arch.channels = {beta.size()};
  Rng rng(0);
  OccModel m;
  m.params = ModelParams<float>::init(arch, rng);
  auto &block = m.params.encoder[0];
  block.kernels.fill(0.0f);
  block.gamma.fill(0.0f);
  block.beta = Tensor<float>({beta.size()}, beta);
  m.config.mode = Modality::unimodal_left;
  m.tau = tau;
  return m;
}

SamplePair blank_pair(std::size_t size, std::size_t channels = 1) {
  return {Tensor<float>({channels, size, size}, 0.5f), Tensor<float>({channels, size, size}, 0.5f),
          std::nullopt, "probe"};
}

std::vector<SamplePair> positives(std::size_t n, std::uint64_t seed) {
  SynthOptions o;
  o.n_per_class = n;
  o.n_classes = 2;
  o.seed = seed;
  auto all = synth_generate(o);
  all.resize(n);
  return all;
}

} // namespace

TEST(Percentile, NearestRankOneToHundred) {
  std::vector<float> v(100);
  std::iota(v.begin(), v.end(), 1.0f);
  std::reverse(v.begin(), v.end());
  EXPECT_EQ(nearest_rank_percentile(v, 95.0), 95.0f);
  EXPECT_EQ(nearest_rank_percentile(v, 100.0), 100.0f);
  EXPECT_EQ(nearest_rank_percentile(v, 0.5), 1.0f);
}

TEST(Percentile, SingleValueAndConstant) {
  EXPECT_EQ(nearest_rank_percentile({2.5f}, 95.0), 2.5f);
  EXPECT_EQ(nearest_rank_percentile({2.5f}, 1.0), 2.5f);
  EXPECT_EQ(nearest_rank_percentile(std::vector<float>(37, 4.0f), 95.0), 4.0f);
}

TEST(Percentile, Errors) {
  EXPECT_THROW(nearest_rank_percentile({}, 95.0), ParameterError);
  EXPECT_THROW(nearest_rank_percentile({1.0f}, 0.0), ParameterError);
  EXPECT_THROW(nearest_rank_percentile({1.0f}, 101.0), ParameterError);
}

TEST(Percentile, RateWithinOneSample) {
  Rng rng(1);
  for (std::size_t n : {1u, 2u, 19u, 20u, 21u, 100u, 158u, 999u}) {
    std::vector<float> v(n);
    for (auto &x : v)
      x = static_cast<float>(rng.uniform());
    const float tau = nearest_rank_percentile(v, 95.0);
    const auto accepted = std::count_if(v.begin(), v.end(), [&](float x) { return x <= tau; });
    const double rate = static_cast<double>(accepted) / static_cast<double>(n);
    EXPECT_GE(rate, 0.95) << n;
    EXPECT_LE(rate, 0.95 + 1.0 / static_cast<double>(n) + 1e-12) << n;
  }
}

TEST(Percentile, PermutationInvariant) {
  Rng rng(2);
  std::vector<float> v(158);
  for (auto &x : v)
    x = static_cast<float>(rng.normal());
  const float tau = nearest_rank_percentile(v, 95.0);
  for (int i = 0; i < 10; ++i) {
    rng.shuffle(v.begin(), v.end());
    EXPECT_EQ(nearest_rank_percentile(v, 95.0), tau);
  }
}

TEST(Score, ForcedEmbeddingThreeFour) {
  const auto m = stub_model({3.0f, 4.0f, 0.0f, 0.0f}, 5.0f);
  EXPECT_EQ(score(m, blank_pair(2)).value, 5.0f);
}

TEST(Classify, BoundaryInclusive) {
  const auto m = stub_model({3.0f, 4.0f, 0.0f, 0.0f}, 5.0f);
  EXPECT_EQ(classify(m, blank_pair(2)), Label::positive);
  auto below = m;
  below.tau = std::nextafter(5.0f, 0.0f);
  EXPECT_EQ(classify(below, blank_pair(2)), Label::anomaly);
  EXPECT_EQ(decide(0.0f, 0.0f), Label::positive);
  EXPECT_EQ(decide(0.0f, 3.0f), Label::positive);
  EXPECT_EQ(decide(5.0f + 1e-6f, 5.0f), Label::anomaly);
}

TEST(Score, GeometryMismatchIsDimensionError) {
  const auto m = stub_model({1.0f, 2.0f}, 1.0f);
  EXPECT_THROW(score(m, blank_pair(4)), DimensionError);
  EXPECT_THROW(score(m, blank_pair(2, 3)), DimensionError);
}

TEST(Train, Validation) {
  const auto data = positives(4, 0);
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(train(data, c), ParameterError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(train(data, c), ParameterError);
  c = {};
  c.input_size = 20;
  EXPECT_THROW(train(data, c), ParameterError);
  EXPECT_THROW(train({}, TrainConfig{}), ParameterError);
}

TEST(Train, DeterministicAndCalibrated) {
  const auto data = positives(20, 3);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 11;
  const auto a = train(data, c);
  const auto b = train(data, c);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.n_train, 20u);
  EXPECT_TRUE(std::isfinite(a.tau));
  EXPECT_GE(a.tau, 0.0f);

  const auto scores = score_batch(a, data);
  const auto accepted = std::count_if(scores.begin(), scores.end(), [&](float s) {
    return decide(s, a.tau) == Label::positive;
  });
  EXPECT_GE(accepted, 19);
  EXPECT_LE(accepted, 20);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(score(a, data[i]).value, scores[i]);
    EXPECT_EQ(classify(a, data[i]), decide(scores[i], a.tau));
    EXPECT_GE(scores[i], 0.0f);
  }
}

TEST(Train, DifferentSeedsDiffer) {
  const auto data = positives(12, 4);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 6;
  c.seed = 1;
  const auto a = train(data, c);
  c.seed = 2;
  EXPECT_FALSE(a == train(data, c));
}

TEST(Train, TauIndependentOfTrainingOrderForFixedParams) {
  const auto data = positives(16, 5);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 8;
  const auto m = train(data, c);
  auto shuffled = data;
  Rng rng(9);
  rng.shuffle(shuffled.begin(), shuffled.end());
  EXPECT_EQ(calibrate_threshold(m.params, shuffled, m.config.mode), m.tau);
}

TEST(Train, PartialBatchAndSingletonBatch) {
  // 9 samples, batch 4: batches 4, 4, 1; the last one cannot be regularized.
  const auto data = positives(9, 6);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  c.regularizer = Regularizer::direct;
  std::vector<EpochStats> history;
  TrainOptions o;
  o.history = &history;
  train(data, c, o);
  ASSERT_EQ(history.size(), 1u);
  EXPECT_EQ(history[0].steps, 3u);
}

TEST(Train, UnimodalModes) {
  const auto data = positives(10, 7);
  for (auto mode : {Modality::unimodal_left, Modality::unimodal_right}) {
    TrainConfig c;
    c.epochs = 1;
    c.batch_size = 5;
    c.mode = mode;
    const auto m = train(data, c);
    EXPECT_TRUE(std::isfinite(m.tau));
  }
}

TEST(Train, DivergenceReportsStep) {
  const auto data = positives(8, 8);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 4;
  c.lr = 1e30;
  try {
    train(data, c);
    FAIL() << "expected divergence";
  } catch (const NumericError &e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
  }
}

// Training progress: final-epoch mean loss below the first epoch's for at
// least four of five seeds.
TEST(Train, LossDecreases) {
  SynthOptions so;
  so.n_per_class = 60;
  so.n_classes = 4;
  so.seed = 21;
  const auto all = synth_generate(so);
  const std::vector<SamplePair> data(all.begin(), all.begin() + 60);
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig c;
    c.seed = seed;
    std::vector<EpochStats> history;
    TrainOptions o;
    o.history = &history;
    train(data, c, o);
    improved += history.back().mean.total < history.front().mean.total;
  }
  EXPECT_GE(improved, 4);
}
