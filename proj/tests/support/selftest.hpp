#pragma once

// Quick oracle and invariant checks run by `aprnet selftest`.

#include <algorithm>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "aprnet/aprnet.hpp"
#include "oracles.hpp"

namespace aprnet_selftest {

using namespace aprnet;
using TD = Tensor<double>;

inline TD random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(s);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline double rel_err(const TD& a, const TD& b) {
  if (a.shape() != b.shape()) return 1e300;
  double e = 0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]) / (1 + std::abs(b[i])));
  return e;
}

inline int run(std::ostream& os) {
  std::mt19937_64 rng(2024);
  int failures = 0;
  auto check = [&](const std::string& name, bool ok) {
    os << (ok ? "PASS  " : "FAIL  ") << name << "\n";
    if (!ok) ++failures;
  };

  {
    const TD x = random_tensor({5, 7, 3}, rng);
    const TD w = random_tensor(ConvWeight<double>::storage_shape(2, 3, 3, 3), rng);
    bool ok = true;
    for (std::size_t stride : {1, 2}) {
      ok = ok && rel_err(conv2d(x, w, 3, 3, stride, Padding::same), oracle::conv2d(x, w, 3, 3, stride, true)) < 1e-6;
    }
    check("conv2d matches the direct loop", ok);
  }
  {
    const TD x = random_tensor({5, 6, 3}, rng);
    check("bilinear resize matches point sampling",
          rel_err(resize_bilinear(x, 9, 4), oracle::resize_bilinear(x, 9, 4)) < 1e-6);
    check("adaptive pooling matches per-bin means",
          rel_err(avg_pool_to(x, 2, 4), oracle::avg_pool(x, 2, 4)) < 1e-6);
  }
  {
    const TD c = random_tensor({6, 6, 2}, rng);
    const TD s = random_tensor({6, 6, 2}, rng, 0.1, 2);
    const TD w = random_tensor(ConvWeight<double>::storage_shape(2, 3, 3, 2), rng);
    auto run_mod = [&](const TD& style) {
      Tape<double> t;
      return t.value(ops::modconv(t, t.constant(c), t.constant(style), t.constant(w), 3, 3));
    };
    const TD ref = oracle::modconv(c, s, w, 3, kDemodEpsilon);
    check("modconv matches the per-pixel oracle", rel_err(run_mod(s), ref) < 1e-6);
    bool inv = true;
    for (double a : {0.5, 2.0, 10.0}) {
      TD sa = s;
      for (auto& v : sa.storage()) v *= a;
      inv = inv && rel_err(run_mod(sa), run_mod(s)) < 1e-5;
    }
    check("modconv is invariant to style scale", inv);
  }
  {
    const TD q = random_tensor({6, 7, 4}, rng);
    const TD k = random_tensor({6, 7, 4}, rng);
    const TD v = random_tensor({6, 7, 3}, rng, 0, 1);
    bool ok = true;
    for (auto [kk, mm] : {std::pair<std::size_t, std::size_t>{2, 1}, {3, 2}, {5, 4}}) {
      Tape<double> t;
      const auto& y = t.value(ops::grid_attention(t, t.constant(q), t.constant(k), t.constant(v),
                                                  SamplingGrid::make(kk, mm)));
      ok = ok && rel_err(y, oracle::grid_attention(q, k, v, kk, mm)) < 1e-6;
    }
    check("grid attention matches the per-coordinate oracle", ok);
    Tape<double> t;
    const auto& y1 = t.value(ops::grid_attention(t, t.constant(q), t.constant(k), t.constant(v),
                                                 SamplingGrid::make(1, 4)));
    check("single-candidate attention returns the style pixel", y1 == v);
    const auto g = SamplingGrid::make(5, 4);
    check("k=5, m=4 grid has 25 candidates over a 17x17 span", g.candidates() == 25 && g.span() == 17);
  }
  {
    const TD q = random_tensor({8, 12, 4}, rng);
    std::array<TD, 4> keys, vals;
    for (auto& kk : keys) kk = random_tensor({4, 6, 4}, rng);
    for (auto& vv : vals) vv = random_tensor({4, 6, 3}, rng);
    Tape<double> t;
    std::array<Var, 4> kv{}, vv{};
    for (std::size_t l = 0; l < 4; ++l) {
      kv[l] = t.constant(keys[l]);
      vv[l] = t.constant(vals[l]);
    }
    const auto& y = t.value(ops::pyramid_fuse(t, t.constant(q), kv, vv));
    check("pyramid fusion matches the per-coordinate oracle", rel_err(y, oracle::pyramid_fuse(q, keys, vals)) < 1e-6);
  }
  {
    const TD img = random_tensor({20, 26, 3}, rng, 0, 1);
    const auto mask = binarize_adaptive(img.cast<float>(), 7, 0.05);
    const auto ref = oracle::binarize(oracle::to_double(img.cast<float>()), 7, 0.05);
    check("adaptive binarization matches the window oracle", rel_err(oracle::to_double(mask), ref) == 0);
    Image sq(Shape{9, 9, 1});
    std::vector<std::vector<int>> grid(9, std::vector<int>(9, 0));
    for (std::size_t y = 2; y < 7; ++y)
      for (std::size_t x = 2; x < 7; ++x) {
        sq(y, x, 0) = 1;
        grid[y][x] = 1;
      }
    const auto sk = skeletonize(sq);
    const auto thin = oracle::thin(grid);
    bool same = true;
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 9; ++x) same = same && (sk(y, x, 0) > 0.5f) == (thin[y][x] == 1);
    check("thinning of a filled square matches the rule oracle", same);
  }
  {
    std::mt19937_64 r(5);
    const auto img = random_tensor({32, 64, 3}, rng, 0, 1).cast<float>();
    const auto res = single_crop(img, r);
    auto sorted = [](std::vector<float> v) { std::sort(v.begin(), v.end()); return v; };
    check("single crop preserves pixel values",
          sorted(img.storage()) == sorted(res.style.storage()));
  }
  {
    const TD a = random_tensor({16, 20, 3}, rng, 0, 1);
    const TD b = random_tensor({16, 20, 3}, rng, 0, 1);
    check("psnr matches the direct formula", std::abs(psnr(a, b) - oracle::psnr(a, b)) < 1e-9);
    check("ssim matches the sliding-window oracle",
          std::abs(ssim(a, b) - oracle::ssim(oracle::to_double(a.cast<float>()), oracle::to_double(b.cast<float>()))) < 1e-6);
    check("ssim of an image with itself is 1", ssim(a, a) == 1.0);
  }
  os << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
  return failures;
}

}  // namespace aprnet_selftest
