#include "test_util.hpp"

using namespace aprnet;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

Tensor<double> attend(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                      std::size_t kk, std::size_t m) {
  Tape<double> t;
  return t.value(ops::grid_attention(t, t.constant(q), t.constant(k), t.constant(v),
                                     SamplingGrid::make(kk, m)));
}

}  // namespace

TEST(SamplingGrid, DefaultSpanAndCandidates) {
  const auto g = SamplingGrid::make(5, 4);
  EXPECT_EQ(g.candidates(), 25u);
  EXPECT_EQ(g.span(), 17u);
  EXPECT_EQ(g.offsets.front(), (std::pair<std::ptrdiff_t, std::ptrdiff_t>{-8, -8}));
  EXPECT_EQ(g.offsets.back(), (std::pair<std::ptrdiff_t, std::ptrdiff_t>{8, 8}));
}

TEST(SamplingGrid, OddExtentPutsExtraSampleOnPositiveSide) {
  const auto g = SamplingGrid::make(2, 3);
  EXPECT_EQ(g.offsets.front().first, -1);
  EXPECT_EQ(g.offsets.back().first, 2);
  EXPECT_THROW(SamplingGrid::make(0, 4), DomainError);
  EXPECT_THROW(SamplingGrid::make(3, 0), DomainError);
  EXPECT_NO_THROW(SamplingGrid::make(1, 0));
}

TEST(GridAttention, MatchesPerCoordinateOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 12), kd(1, 5), md(1, 4), ch(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng), d = ch(rng), c = ch(rng);
    const std::size_t k = kd(rng), m = md(rng);
    const auto q = random_tensor({h, w, d}, rng, -2, 2);
    const auto key = random_tensor({h, w, d}, rng, -2, 2);
    const auto v = random_tensor({h, w, c}, rng);
    ASSERT_LT(rel_err(attend(q, key, v, k, m), oracle::grid_attention(q, key, v, k, m)), 1e-12)
        << "trial " << trial;
  }
}

TEST(GridAttention, OutputIsConvexCombinationOfNeighbourhood) {
  std::mt19937_64 rng(12);
  const std::size_t H = 9, W = 14, k = 5, m = 2;
  const auto q = random_tensor({H, W, 4}, rng, -3, 3);
  const auto key = random_tensor({H, W, 4}, rng, -3, 3);
  const auto v = random_tensor({H, W, 3}, rng, 0, 1);
  const auto y = attend(q, key, v, k, m);
  const auto g = SamplingGrid::make(k, m);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < 3; ++c) {
        double lo = 1e9, hi = -1e9;
        for (auto [dy, dx] : g.offsets) {
          const double s = v(clamp_index(static_cast<std::ptrdiff_t>(i) + dy, H),
                             clamp_index(static_cast<std::ptrdiff_t>(j) + dx, W), c);
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
        ASSERT_GE(y(i, j, c), lo - 1e-12);
        ASSERT_LE(y(i, j, c), hi + 1e-12);
      }
}

TEST(GridAttention, SingleSampleReturnsStylePixel) {
  std::mt19937_64 rng(13);
  const auto q = random_tensor({6, 8, 5}, rng);
  const auto key = random_tensor({6, 8, 5}, rng);
  const auto v = random_tensor({6, 8, 3}, rng, 0, 1);
  EXPECT_EQ(attend(q, key, v, 1, 4), v);
}

TEST(GridAttention, ShapeErrors) {
  Tape<double> t;
  Var q = t.constant(Tensor<double>(Shape{4, 4, 3}));
  Var k = t.constant(Tensor<double>(Shape{4, 4, 2}));
  Var v = t.constant(Tensor<double>(Shape{4, 5, 3}));
  EXPECT_THROW(ops::grid_attention(t, q, k, q, SamplingGrid::make(3, 1)), ShapeError);
  EXPECT_THROW(ops::grid_attention(t, q, q, v, SamplingGrid::make(3, 1)), ShapeError);
}

TEST(AttnPixamp, HalfResolutionInputsAndOutput) {
  Rng rng(1);
  Encoder<float> ce(EncoderKind::content, rng), se(EncoderKind::style, rng);
  AttnPixamp<float> sam(64, 5, 4, rng);
  std::mt19937_64 r(2);
  Tape<float> t;
  auto content = random_tensor<float>({128, 384, 1}, r, 0, 1);
  for (auto& v : content.storage()) v = v > 0.9f ? 1.0f : 0.0f;
  const auto cb = encode_content(t, ce, t.constant(content));
  const auto sb = encode_style(t, se, t.constant(random_tensor<float>({128, 384, 3}, r, 0, 1)));
  const auto in = build_sam_inputs(t, cb, sb);
  EXPECT_EQ(t.shape(in.content), (Shape{64, 192, 736}));
  EXPECT_EQ(t.shape(in.style), (Shape{64, 192, 480}));
  EXPECT_EQ(t.shape(in.style_half), (Shape{64, 192, 3}));
  const auto& y = t.value(sam.render(t, in));
  EXPECT_EQ(y.shape(), (Shape{64, 192, 3}));
  // Convex mix of a [0,1] image stays in [0,1].
  for (float v : y.storage()) {
    ASSERT_GE(v, -1e-6f);
    ASSERT_LE(v, 1 + 1e-6f);
  }
  EXPECT_THROW(build_sam_inputs(t, sb, cb), ConfigError);
}
