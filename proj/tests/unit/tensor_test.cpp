#include <gtest/gtest.h>

#include "mocc/rng.hpp"
#include "mocc/tensor.hpp"

using mocc::Shape;
using mocc::Tensor;

TEST(Tensor, SizeMatchesShape) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_FLOAT_EQ(t.sum(), 36.0f);
}

TEST(Tensor, RejectsZeroExtent) {
  EXPECT_THROW(Tensor<float>({2, 0}), mocc::DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), mocc::DimensionError);
}

TEST(Tensor, DefaultIsEmpty) {
  Tensor<float> t;
  EXPECT_TRUE(t.empty());
  EXPECT_EQ(t.size(), 0u);
}

TEST(Tensor, At4MatchesRowMajorOffset) {
  Tensor<int> t({2, 3, 4, 5});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<int>(i);
  EXPECT_EQ(t.at(1, 2, 3, 4), 119);
  EXPECT_EQ(t.at(0, 1, 0, 2), 22);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor<int> t({2, 3}, std::vector<int>{1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.storage(), t.storage());
  EXPECT_THROW(t.reshaped({4, 2}), mocc::DimensionError);
}

TEST(Tensor, SquaredNormAndFinite) {
  Tensor<float> t({2}, std::vector<float>{3.0f, 4.0f});
  EXPECT_DOUBLE_EQ(t.squared_norm(), 25.0);
  EXPECT_TRUE(t.all_finite());
  t[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, ConcatAndSliceBatch) {
  Tensor<int> a({1, 2}, std::vector<int>{1, 2});
  Tensor<int> b({2, 2}, std::vector<int>{3, 4, 5, 6});
  auto c = mocc::concat_batch(a, b);
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  EXPECT_EQ(c.storage(), (std::vector<int>{1, 2, 3, 4, 5, 6}));
  auto s = mocc::slice_batch(c, 1, 3);
  EXPECT_EQ(s, b);
}

TEST(Rng, SameSeedSameStream) {
  mocc::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i)
    ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, UniformIntInRange) {
  mocc::Rng rng(1);
  std::vector<int> counts(7);
  for (int i = 0; i < 7000; ++i) {
    auto v = rng.uniform_int(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  for (int c : counts)
    EXPECT_NEAR(c, 1000, 150);
}

TEST(Rng, NormalMoments) {
  mocc::Rng rng(3);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}
