#include "test_util.hpp"

using namespace aprnet;
using testutil::random_tensor;

namespace {

Tensor<float> skeleton_like(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(0.1);
  Tensor<float> t(Shape{h, w, 1});
  for (auto& v : t.storage()) v = b(rng) ? 1.0f : 0.0f;
  return t;
}

}  // namespace

TEST(Encoders, StageShapesAt128x384) {
  Rng rng(0);
  Encoder<float> content(EncoderKind::content, rng), style(EncoderKind::style, rng);
  Tape<float> t;
  const auto cb = encode_content(t, content, t.constant(skeleton_like(128, 384, 1)));
  std::mt19937_64 r(2);
  const auto sb = encode_style(t, style, t.constant(random_tensor<float>({128, 384, 3}, r, 0, 1)));
  const Shape expect[4] = {{64, 192, 32}, {32, 96, 64}, {16, 48, 128}, {16, 48, 256}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(t.shape(cb.stages[i]), expect[i]);
    EXPECT_EQ(t.shape(sb.stages[i]), expect[i]);
  }
  EXPECT_EQ(t.shape(cb.aux), (Shape{128, 384, 256}));
  EXPECT_EQ(t.shape(sb.aux), (Shape{128, 384, 3}));
  EXPECT_TRUE(cb.is_content);
  EXPECT_FALSE(sb.is_content);
}

TEST(Encoders, ToyShapes) {
  Rng rng(0);
  Encoder<float> content(EncoderKind::content, rng);
  Tape<float> t;
  const auto cb = encode_content(t, content, t.constant(skeleton_like(32, 96, 1)));
  EXPECT_EQ(t.shape(cb.stages[0]), (Shape{16, 48, 32}));
  EXPECT_EQ(t.shape(cb.stages[3]), (Shape{4, 12, 256}));
}

TEST(Encoders, RejectsNonBinaryContentAndBadShapes) {
  Rng rng(0);
  Encoder<float> content(EncoderKind::content, rng), style(EncoderKind::style, rng);
  Tape<float> t;
  Tensor<float> gray(Shape{32, 96, 1}, 0.5f);
  EXPECT_THROW(encode_content(t, content, t.constant(gray)), DomainError);
  EXPECT_THROW(encode_content(t, content, t.constant(Tensor<float>(Shape{30, 96, 1}))), ShapeError);
  EXPECT_THROW(encode_style(t, style, t.constant(Tensor<float>(Shape{32, 96, 1}))), ShapeError);
  EXPECT_THROW(encode_style(t, content, t.constant(Tensor<float>(Shape{32, 96, 3}))), ConfigError);
}

TEST(Encoders, SameSeedSameFeatures) {
  auto run = [] {
    Rng rng(42);
    Encoder<float> style(EncoderKind::style, rng);
    std::mt19937_64 r(3);
    Tape<float> t;
    const auto sb = encode_style(t, style, t.constant(random_tensor<float>({32, 48, 3}, r, 0, 1)));
    return t.value(sb.stages[3]);
  };
  EXPECT_EQ(run(), run());
}

TEST(Encoders, ParameterNamesAreUnique) {
  Rng rng(0);
  Encoder<float> content(EncoderKind::content, rng), style(EncoderKind::style, rng);
  ParamList<float> ps;
  content.collect(ps);
  style.collect(ps);
  std::set<std::string> names;
  for (auto* p : ps) EXPECT_TRUE(names.insert(p->name).second) << p->name;
}
