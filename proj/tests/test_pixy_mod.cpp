#include "test_util.hpp"

using namespace aprnet;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

Tensor<double> run_modconv(const Tensor<double>& c, const Tensor<double>& s, const Tensor<double>& w,
                           std::size_t k) {
  Tape<double> t;
  return t.value(ops::modconv(t, t.constant(c), t.constant(s), t.constant(w), k, k));
}

}  // namespace

TEST(ModConv, MatchesPerPixelOracle) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> dim(1, 8), ch(1, 4);
  std::uniform_int_distribution<int> kern(0, 1);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng), in = ch(rng), out = ch(rng);
    const std::size_t k = kern(rng) ? 3 : 1;
    const auto c = random_tensor({h, w, in}, rng);
    const auto s = random_tensor({h, w, in}, rng, -2, 2);
    const auto wt = random_tensor(ConvWeight<double>::storage_shape(out, k, k, in), rng);
    ASSERT_LT(rel_err(run_modconv(c, s, wt, k), oracle::modconv(c, s, wt, k, kDemodEpsilon)), 1e-10)
        << "trial " << trial;
  }
}

TEST(ModConv, InvariantToStyleScale) {
  std::mt19937_64 rng(22);
  const auto c = random_tensor({7, 9, 3}, rng);
  const auto s = random_tensor({7, 9, 3}, rng, 0.2, 1.5);
  const auto w = random_tensor(ConvWeight<double>::storage_shape(4, 3, 3, 3), rng);
  const auto base = run_modconv(c, s, w, 3);
  for (double a : {0.5, 2.0, 10.0}) {
    Tensor<double> sa = s;
    for (auto& v : sa.storage()) v *= a;
    EXPECT_LT(rel_err(run_modconv(c, sa, w, 3), base), 1e-5) << "alpha " << a;
  }
}

TEST(ModConv, UnitVarianceOnWhiteContent) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0, 1);
  const std::size_t H = 100, W = 100, I = 4, O = 3;
  for (int draw = 0; draw < 3; ++draw) {
    Tensor<double> c(Shape{H, W, I});
    for (auto& v : c.storage()) v = n(rng);
    const auto s = random_tensor({H, W, I}, rng, -2, 2);
    const auto w = random_tensor(ConvWeight<double>::storage_shape(O, 3, 3, I), rng);
    const auto y = run_modconv(c, s, w, 3);
    for (std::size_t o = 0; o < O; ++o) {
      double sum = 0, sq = 0, count = 0;
      // Interior only; the border sees zero padding.
      for (std::size_t i = 1; i + 1 < H; ++i)
        for (std::size_t j = 1; j + 1 < W; ++j) {
          sum += y(i, j, o);
          sq += y(i, j, o) * y(i, j, o);
          ++count;
        }
      const double mean = sum / count;
      const double sd = std::sqrt(sq / count - mean * mean);
      EXPECT_GT(sd, 0.9);
      EXPECT_LT(sd, 1.1);
    }
  }
}

TEST(ModConv, RejectsMismatchedStyle) {
  Tape<double> t;
  Var c = t.constant(Tensor<double>(Shape{4, 4, 2}));
  Var s = t.constant(Tensor<double>(Shape{4, 4, 3}));
  Var w = t.constant(Tensor<double>(ConvWeight<double>::storage_shape(1, 3, 3, 2)));
  EXPECT_THROW(ops::modconv(t, c, s, w, 3, 3), ShapeError);
}

TEST(PixyModStack, ChannelPlanAndOutput) {
  Rng rng(3);
  PixyModStack<double> stack("s", 6, {5, 4}, rng);
  ASSERT_EQ(stack.num_modulations(), 3u);
  EXPECT_EQ(stack.modulation_channels(0), 6u);
  EXPECT_EQ(stack.modulation_channels(1), 5u);
  EXPECT_EQ(stack.modulation_channels(2), 4u);
  std::mt19937_64 r(4);
  Tape<double> t;
  std::vector<Var> styles;
  for (std::size_t i = 0; i < 3; ++i)
    styles.push_back(t.constant(random_tensor({5, 7, stack.modulation_channels(i)}, r)));
  Var y = stack.forward(t, t.constant(random_tensor({5, 7, 6}, r)), std::span<const Var>(styles));
  EXPECT_EQ(t.shape(y), (Shape{5, 7, 3}));
  styles.pop_back();
  EXPECT_THROW(stack.forward(t, t.constant(random_tensor({5, 7, 6}, r)), std::span<const Var>(styles)),
               ConfigError);
  EXPECT_THROW(PixyModStack<double>("e", 3, {}, rng), ConfigError);
}

TEST(PixyModStack, WrongStyleShapeIsReported) {
  Rng rng(5);
  PixyModStack<double> stack("s", 2, {3}, rng);
  Tape<double> t;
  std::vector<Var> styles{t.constant(Tensor<double>(Shape{4, 4, 2})),
                          t.constant(Tensor<double>(Shape{4, 4, 2}))};
  EXPECT_THROW(stack.forward(t, t.constant(Tensor<double>(Shape{4, 4, 2})), std::span<const Var>(styles)),
               ShapeError);
}

TEST(FuseStages, AddsUpsampledStageOneAndClamps) {
  Tensor<float> mod(Shape{4, 6, 3}, 0.7f);
  Tensor<float> sam(Shape{2, 3, 3}, 0.5f);
  const auto y = fuse_stages(mod, sam);
  for (float v : y.storage()) EXPECT_FLOAT_EQ(v, 1.0f);
  Tensor<float> neg(Shape{2, 3, 3}, -0.2f);
  const auto z = fuse_stages(mod, neg);
  for (float v : z.storage()) EXPECT_NEAR(v, 0.5f, 1e-6f);
  EXPECT_THROW(fuse_stages(mod, Tensor<float>(Shape{3, 3, 3})), ShapeError);
}
