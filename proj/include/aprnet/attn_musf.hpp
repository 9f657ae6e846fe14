#pragma once

// Multi-scale style fusion. Keys and values are built at H/8 x W/8 from the
// concatenated style bank, pooled into a 4-level pyramid (local plus three
// SPP levels, each resampled back to H/8 x W/8), and fused per query pixel by
// softmax attention over the 4 levels at the query's H/8 cell.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "aprnet/encoders.hpp"

namespace aprnet {

inline constexpr std::size_t kPyramidLevels = 4;

/// Style bank stages resampled to H/8 x W/8 and concatenated (480 channels).
template <class T>
Var build_style_cat(Tape<T>& t, const FeatureBank& style) {
  if (style.is_content) throw ConfigError("build_style_cat: expected a style bank");
  const Shape full = t.shape(style.aux);
  const std::size_t h8 = full.h / 8, w8 = full.w / 8;
  std::vector<Var> parts;
  for (auto v : style.stages) parts.push_back(ops::resize_bilinear(t, v, h8, w8));
  return ops::concat_channels(t, parts);
}

struct PooledSize {
  std::size_t h = 0;
  std::size_t w = 0;
};

/// Pooled grid of SPP levels 1..3 for an (h8, w8) base: rows 4, 2, 1 and
/// widths rounded up from rows * w8 / h8.
inline std::array<PooledSize, 3> pyramid_sizes(std::size_t h8, std::size_t w8) {
  if (h8 < 4) {
    throw ConfigError("SPP pyramid needs H/8 >= 4, got H/8 = " + std::to_string(h8));
  }
  std::array<PooledSize, 3> out{};
  const std::array<std::size_t, 3> rows{4, 2, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    out[i].h = rows[i];
    out[i].w = std::min(w8, (rows[i] * w8 + h8 - 1) / h8);
  }
  return out;
}

/// Level 0 is the input; levels 1..3 are pooled and bilinearly up-sampled.
template <class T>
std::array<Var, kPyramidLevels> build_pyramid(Tape<T>& t, Var base) {
  const Shape s = t.shape(base);
  const auto sizes = pyramid_sizes(s.h, s.w);
  std::array<Var, kPyramidLevels> levels{base};
  for (std::size_t i = 0; i < 3; ++i) {
    Var pooled = ops::avg_pool_to(t, base, sizes[i].h, sizes[i].w);
    levels[i + 1] = ops::resize_bilinear(t, pooled, s.h, s.w);
  }
  return levels;
}

/// Cell of the key grid that query row/col `q` maps to.
inline std::size_t key_cell(std::size_t q, std::size_t query_extent, std::size_t key_extent) {
  return (q * key_extent) / query_extent;
}

/// Softmax weights over the 4 pyramid levels for every query pixel.
template <class T>
Tensor<T> attention_map(const Tensor<T>& q, const std::array<const Tensor<T>*, kPyramidLevels>& keys) {
  const Shape ks = keys[0]->shape();
  for (const auto* k : keys) require_same_shape(k->shape(), ks, "attention_map keys");
  if (ks.c != q.c()) throw ShapeError("attention_map: query/key depth mismatch");
  if (ks.h > q.h() || ks.w > q.w()) throw ShapeError("attention_map: key grid larger than query");
  const std::size_t H = q.h(), W = q.w(), D = q.c();
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));
  Tensor<T> a(Shape{H, W, kPyramidLevels});
  parallel_rows(H, [&](std::size_t j) {
    const std::size_t kj = key_cell(j, H, ks.h);
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t kx = key_cell(x, W, ks.w);
      const T* qp = &q(j, x, 0);
      T* ap = &a(j, x, 0);
      for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const T* kp = &(*keys[l])(kj, kx, 0);
        T dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += qp[d] * kp[d];
        ap[l] = dot * inv_sqrt_d;
      }
      softmax_inplace(std::span<T>(ap, kPyramidLevels));
    }
  });
  return a;
}

namespace ops {

/// Fused style tensor: per query pixel, the attention-weighted sum of the 4
/// value levels at its mapped cell. The weights are returned via `weights`.
template <class T>
Var pyramid_fuse(Tape<T>& t, Var q, const std::array<Var, kPyramidLevels>& keys,
                 const std::array<Var, kPyramidLevels>& values,
                 Tensor<T>* weights_out = nullptr) {
  std::array<const Tensor<T>*, kPyramidLevels> kt{}, vt{};
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    kt[l] = &t.value(keys[l]);
    vt[l] = &t.value(values[l]);
    if (vt[l]->h() != kt[0]->h() || vt[l]->w() != kt[0]->w()) {
      throw ShapeError("pyramid_fuse: value grid differs from key grid");
    }
    require_same_shape(vt[l]->shape(), vt[0]->shape(), "pyramid_fuse values");
  }
  const auto& Q = t.value(q);
  auto weights = std::make_shared<Tensor<T>>(attention_map(Q, kt));
  if (weights_out != nullptr) *weights_out = *weights;
  const std::size_t H = Q.h(), W = Q.w(), D = Q.c(), C = vt[0]->c();
  const std::size_t KH = kt[0]->h(), KW = kt[0]->w();
  Tensor<T> y(Shape{H, W, C});
  parallel_rows(H, [&](std::size_t j) {
    const std::size_t kj = key_cell(j, H, KH);
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t kx = key_cell(x, W, KW);
      const T* ap = &(*weights)(j, x, 0);
      T* out = &y(j, x, 0);
      for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const T* vp = &(*vt[l])(kj, kx, 0);
        for (std::size_t ch = 0; ch < C; ++ch) out[ch] += ap[l] * vp[ch];
      }
    }
  });

  std::vector<Var> inputs{q};
  inputs.insert(inputs.end(), keys.begin(), keys.end());
  inputs.insert(inputs.end(), values.begin(), values.end());
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));
  return t.record(std::move(y), std::span<const Var>(inputs),
                  [q, keys, values, weights, H, W, D, C, KH, KW, inv_sqrt_d](Tape<T>& tp,
                                                                            const Tensor<T>& g) {
    const auto& Qv = tp.value(q);
    auto* gq = tp.grad_slot(q);
    std::array<Tensor<T>*, kPyramidLevels> gk{}, gv{};
    std::array<const Tensor<T>*, kPyramidLevels> kv{}, vv{};
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      gk[l] = tp.grad_slot(keys[l]);
      gv[l] = tp.grad_slot(values[l]);
      kv[l] = &tp.value(keys[l]);
      vv[l] = &tp.value(values[l]);
    }
    std::array<T, kPyramidLevels> dlogit{};
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t kj = key_cell(j, H, KH);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t kx = key_cell(x, W, KW);
        const T* ap = &(*weights)(j, x, 0);
        const T* gp = &g(j, x, 0);
        T mean_da = 0;
        for (std::size_t l = 0; l < kPyramidLevels; ++l) {
          const T* vp = &(*vv[l])(kj, kx, 0);
          T da = 0;
          for (std::size_t ch = 0; ch < C; ++ch) da += gp[ch] * vp[ch];
          dlogit[l] = da;
          mean_da += ap[l] * da;
          if (gv[l]) {
            T* dv = &(*gv[l])(kj, kx, 0);
            for (std::size_t ch = 0; ch < C; ++ch) dv[ch] += ap[l] * gp[ch];
          }
        }
        const T* qp = &Qv(j, x, 0);
        for (std::size_t l = 0; l < kPyramidLevels; ++l) {
          const T dl = ap[l] * (dlogit[l] - mean_da) * inv_sqrt_d;
          const T* kp = &(*kv[l])(kj, kx, 0);
          if (gq) {
            T* dq = &(*gq)(j, x, 0);
            for (std::size_t d = 0; d < D; ++d) dq[d] += dl * kp[d];
          }
          if (gk[l]) {
            T* dk = &(*gk[l])(kj, kx, 0);
            for (std::size_t d = 0; d < D; ++d) dk[d] += dl * qp[d];
          }
        }
      }
    }
  });
}

}  // namespace ops

/// One fusion module per PixyMod modulation.
template <class T>
class AttnMuSF {
 public:
  struct Output {
    Var style;
    Tensor<T> attention;  // H x W x 4
  };

  AttnMuSF() = default;
  AttnMuSF(const std::string& name, std::size_t query_in, std::size_t value_channels,
           std::size_t d_f, Rng& rng)
      : query_(name + ".query", query_in, d_f, 1, 1, 1, rng, false),
        key_(name + ".key", kStyleBankChannels, d_f, 1, 1, 1, rng, false),
        value_(name + ".value", kStyleBankChannels, value_channels, 1, 1, 1, rng, false) {}

  std::size_t value_channels() const { return value_.out_channels(); }

  /// query_source: content features at the working size. style_cat: H/8 x W/8 x 480.
  Output forward(Tape<T>& t, Var query_source, Var style_cat) {
    Var q = query_.forward(t, query_source);
    const auto keys = build_pyramid(t, key_.forward(t, style_cat));
    const auto values = build_pyramid(t, value_.forward(t, style_cat));
    Output out;
    out.style = ops::pyramid_fuse(t, q, keys, values, &out.attention);
    return out;
  }

  void collect(ParamList<T>& out) {
    query_.collect(out);
    key_.collect(out);
    value_.collect(out);
  }

 private:
  Conv2d<T> query_, key_, value_;
};

}  // namespace aprnet
