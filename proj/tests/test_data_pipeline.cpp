#include "test_util.hpp"

#include <fstream>

using namespace aprnet;
using testutil::random_tensor;

namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = APRNET_FIXTURES;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("aprnet_test_" + name);
  fs::remove_all(p);
  return p;
}

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 r(seed);
  auto img = random_tensor<float>({h, w, 3}, r, 0, 1);
  // Quantize so that byte-level comparisons are meaningful.
  for (auto& v : img.storage()) v = std::round(v * 255.0f) / 255.0f;
  return img;
}

std::vector<float> patch_bytes(const Image& img, std::size_t py, std::size_t px, std::size_t P,
                               int turns) {
  Image one(Shape{P, P, img.c()});
  blit_rotated(img, py * P, px * P, one, 0, 0, P, turns);
  return one.storage();
}

/// Canonical form of a patch: the smallest of its four rotations.
std::multiset<std::vector<float>> patch_multiset(const Image& img, std::size_t P) {
  std::multiset<std::vector<float>> out;
  for (std::size_t gy = 0; gy < img.h() / P; ++gy)
    for (std::size_t gx = 0; gx < img.w() / P; ++gx) {
      auto best = patch_bytes(img, gy, gx, P, 0);
      for (int r = 1; r < 4; ++r) best = std::min(best, patch_bytes(img, gy, gx, P, r));
      out.insert(best);
    }
  return out;
}

}  // namespace

TEST(Gray, LumaWeights) {
  Image rgb(Shape{1, 1, 3}, std::vector<float>{1.0f, 0.5f, 0.25f});
  EXPECT_NEAR(to_gray(rgb)[0], 0.299f + 0.5f * 0.587f + 0.25f * 0.114f, 1e-6f);
  EXPECT_THROW(to_gray(Image(Shape{1, 1, 2})), ShapeError);
}

TEST(Binarize, MatchesWindowMeanOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(23, 41, seed);
    for (std::size_t window : {3u, 7u, 31u}) {
      const auto got = binarize_adaptive(img, window, 0.05);
      const auto ref = oracle::binarize(oracle::to_double(img), window, 0.05);
      for (std::size_t i = 0; i < got.size(); ++i) ASSERT_EQ(got[i], ref[i]) << "seed " << seed;
    }
  }
  EXPECT_THROW(binarize_adaptive(random_image(4, 4, 1), 0), DomainError);
}

TEST(Binarize, DarkStrokeOnLightBackground) {
  Image img(Shape{20, 40, 3}, 0.9f);
  for (std::size_t x = 5; x < 35; ++x)
    for (std::size_t y = 9; y < 12; ++y)
      for (std::size_t c = 0; c < 3; ++c) img(y, x, c) = 0.1f;
  const auto m = binarize_adaptive(img);
  EXPECT_EQ(m(10, 20, 0), 1.0f);
  EXPECT_EQ(m(2, 20, 0), 0.0f);
}

TEST(Skeleton, MatchesRuleBasedThinning) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution b(0.55);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t H = 12 + trial % 7, W = 15 + trial % 5;
    Image m(Shape{H, W, 1});
    std::vector<std::vector<int>> grid(H, std::vector<int>(W));
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        grid[y][x] = b(rng);
        m(y, x, 0) = static_cast<float>(grid[y][x]);
      }
    const auto got = skeletonize(m);
    const auto ref = oracle::thin(grid);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) ASSERT_EQ(got(y, x, 0), static_cast<float>(ref[y][x]));
  }
}

TEST(Skeleton, ThickBarBecomesThinLine) {
  Image m(Shape{15, 40, 1});
  for (std::size_t y = 5; y < 10; ++y)
    for (std::size_t x = 3; x < 37; ++x) m(y, x, 0) = 1;
  const auto s = skeletonize(m);
  std::size_t on = 0;
  for (std::size_t x = 8; x < 32; ++x) {
    std::size_t col = 0;
    for (std::size_t y = 0; y < 15; ++y) col += s(y, x, 0) > 0;
    EXPECT_EQ(col, 1u) << "column " << x;
    on += col;
  }
  EXPECT_GT(on, 0u);
}

TEST(ResizeCrop, OutputSizeAndPadding) {
  Rng rng(1);
  const auto wide = random_image(64, 400, 1);
  EXPECT_EQ(resize_keep_aspect_then_crop(wide, rng).shape(), (Shape{128, 384, 3}));
  const auto narrow = random_image(20, 30, 2);
  const auto padded = resize_keep_aspect_then_crop(narrow, rng, 32, 96);
  EXPECT_EQ(padded.shape(), (Shape{32, 96, 3}));
  // Edge replication: leftmost columns equal.
  for (std::size_t y = 0; y < 32; ++y) EXPECT_EQ(padded(y, 0, 0), padded(y, 1, 0));
  EXPECT_THROW(resize_keep_aspect_then_crop(Image(Shape{0, 4, 3}), rng), ShapeError);
}

TEST(SingleCrop, PatchMultisetPreservedUpToRotation) {
  const auto gt = random_image(32, 96, 3);
  const auto reference = patch_multiset(gt, 16);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const auto r = single_crop(gt, rng);
    ASSERT_EQ(patch_multiset(r.style, 16), reference) << "seed " << seed;
  }
}

TEST(SingleCrop, SwapsOnlyWithNeighbours) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rec = sample_shuffle(8, 24, 16, rng);
    for (std::size_t i = 0; i < rec.partner.size(); ++i) {
      if (rec.partner[i] < 0) continue;
      const auto j = static_cast<std::size_t>(rec.partner[i]);
      ASSERT_EQ(static_cast<std::size_t>(rec.partner[j]), i);
      const auto dy = std::abs(static_cast<long>(i / 24) - static_cast<long>(j / 24));
      const auto dx = std::abs(static_cast<long>(i % 24) - static_cast<long>(j % 24));
      ASSERT_LE(std::max(dy, dx), 1);
      ASSERT_NE(i, j);
    }
  }
}

TEST(SingleCrop, IdentityPolicyIsByteExact) {
  const auto gt = random_image(128, 384, 5);
  Rng rng(6);
  const ShufflePolicy identity{false, 0.0};
  EXPECT_EQ(single_crop(gt, rng, 16, identity).style, gt);
}

TEST(SingleCrop, SeedDeterminismAndErrors) {
  const auto gt = random_image(32, 96, 7);
  Rng a(8), b(8), c(9);
  const auto sa = single_crop(gt, a).style;
  EXPECT_EQ(sa, single_crop(gt, b).style);
  EXPECT_NE(sa, single_crop(gt, c).style);
  Rng r(0);
  EXPECT_THROW(single_crop(random_image(30, 96, 1), r), ShapeError);
  EXPECT_THROW(single_crop(gt, r, 0), DomainError);
}

TEST(Triplet, SyntheticTripletHasBinarySkeleton) {
  Rng rng(10);
  TripletOptions opt;
  opt.height = 32;
  opt.width = 96;
  const auto src = synthetic_text_line(rng, 32, 140);
  EXPECT_EQ(src.shape(), (Shape{32, 140, 3}));
  const auto t = make_triplet(src, rng, opt);
  EXPECT_EQ(t.content.shape(), (Shape{32, 96, 1}));
  EXPECT_EQ(t.style.shape(), (Shape{32, 96, 3}));
  EXPECT_EQ(t.ground_truth.shape(), (Shape{32, 96, 3}));
  std::size_t on = 0;
  for (float v : t.content.storage()) {
    ASSERT_TRUE(v == 0.0f || v == 1.0f);
    on += v > 0;
  }
  EXPECT_GT(on, 10u);
  EXPECT_LT(on, 32u * 96u / 4);
}

TEST(Png, FixturesLoadWithExpectedValues) {
  const auto rgb = load_png(kFixtures / "rgb_2x2.png");
  ASSERT_EQ(rgb.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(rgb(0, 0, 0), 1.0f);
  EXPECT_EQ(rgb(0, 1, 1), 1.0f);
  EXPECT_EQ(rgb(1, 0, 2), 1.0f);
  EXPECT_EQ(rgb(1, 0, 0), 0.0f);
  const auto gray = load_png(kFixtures / "gray_3x1.png");
  ASSERT_EQ(gray.shape(), (Shape{1, 3, 3}));
  EXPECT_FLOAT_EQ(gray(0, 2, 1), 128.0f / 255.0f);
  EXPECT_THROW(load_png(kFixtures / "missing.png"), IoError);
}

TEST(Png, RoundTripAndRgba) {
  const auto dir = scratch("png");
  const auto img = random_image(5, 7, 11);
  save_png(dir / "a.png", img);
  EXPECT_EQ(load_png(dir / "a.png"), img);
  Image rgba(Shape{3, 4, 4}, 0.5f);
  save_png(dir / "b.png", rgba);
  std::ifstream is(dir / "b.png", std::ios::binary);
  char header[26];
  is.read(header, 26);
  EXPECT_EQ(header[25], 6);  // colour type RGBA
  EXPECT_THROW(save_png(dir / "c.png", Image(Shape{2, 2, 2})), ShapeError);
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(load_png(dir / "bad.png"), IoError);
  fs::remove_all(dir);
}

TEST(Dataset, GenerateFromDirectoryAndReload) {
  const auto dir = scratch("dataset");
  DatagenOptions opt;
  opt.source = (kFixtures / "lines").string();
  opt.out = dir;
  opt.seed = 3;
  opt.count = 4;
  opt.triplet.height = 32;
  opt.triplet.width = 96;
  generate_dataset(opt);
  const auto set = load_dataset(dir);
  ASSERT_EQ(set.size(), 4u);
  for (const auto& t : set) {
    EXPECT_EQ(t.content.shape(), (Shape{32, 96, 1}));
    EXPECT_EQ(t.ground_truth.shape(), (Shape{32, 96, 3}));
  }
  std::ifstream manifest(dir / "manifest.txt");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(manifest, line)) ++lines;
  EXPECT_EQ(lines, 4u);

  // Same seed, same bytes.
  const auto again = scratch("dataset2");
  opt.out = again;
  generate_dataset(opt);
  const auto set2 = load_dataset(again);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(set2[i].style, set[i].style);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(Dataset, Errors) {
  EXPECT_THROW(load_dataset(scratch("empty")), IoError);
  DatagenOptions opt;
  opt.source = "/nonexistent/dir";
  opt.out = scratch("out");
  EXPECT_THROW(generate_dataset(opt), IoError);
}
