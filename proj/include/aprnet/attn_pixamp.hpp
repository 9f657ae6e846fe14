#pragma once

// Stage-1 renderer. Every half-resolution output pixel is a softmax-weighted
// mix of k*k style pixels sampled on a regular grid around it; weights come
// from content queries against style keys at the sampled positions.

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "aprnet/encoders.hpp"

namespace aprnet {

/// k samples per axis, m pixels apart, centred on the query coordinate.
struct SamplingGrid {
  std::size_t k = 5;
  std::size_t m = 4;
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> offsets;  // (dy, dx)

  static SamplingGrid make(std::size_t k, std::size_t m) {
    if (k == 0) throw DomainError("sampling grid: k must be positive");
    if (m == 0 && k > 1) throw DomainError("sampling grid: m must be positive when k > 1");
    SamplingGrid g;
    g.k = k;
    g.m = m;
    // Odd (k-1)*m cannot be centred; the extra sample goes to the positive side.
    const auto start = -static_cast<std::ptrdiff_t>(((k - 1) * m) / 2);
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        g.offsets.emplace_back(start + static_cast<std::ptrdiff_t>(a * m),
                               start + static_cast<std::ptrdiff_t>(b * m));
      }
    }
    return g;
  }

  std::size_t candidates() const { return offsets.size(); }
  std::size_t span() const { return (k - 1) * m + 1; }
};

inline std::size_t clamp_index(std::ptrdiff_t v, std::size_t n) {
  if (v < 0) return 0;
  if (v >= static_cast<std::ptrdiff_t>(n)) return n - 1;
  return static_cast<std::size_t>(v);
}

struct SamInputs {
  Var content;     // H/2 x W/2 x 736
  Var style;       // H/2 x W/2 x 480
  Var style_half;  // H/2 x W/2 x 3
};

/// Resamples both banks to half resolution and concatenates them.
template <class T>
SamInputs build_sam_inputs(Tape<T>& t, const FeatureBank& content, const FeatureBank& style) {
  if (!content.is_content || style.is_content) {
    throw ConfigError("build_sam_inputs: expected (content bank, style bank)");
  }
  const Shape full_c = t.shape(content.aux);
  const Shape full_s = t.shape(style.aux);
  if (full_c.h != full_s.h || full_c.w != full_s.w) {
    throw ShapeError("build_sam_inputs: content bank is " + to_string(full_c) +
                     " but style bank is " + to_string(full_s));
  }
  const std::size_t h2 = full_c.h / 2, w2 = full_c.w / 2;
  std::vector<Var> cs, ss;
  for (auto v : content.stages) cs.push_back(ops::resize_bilinear(t, v, h2, w2));
  cs.push_back(ops::resize_bilinear(t, content.aux, h2, w2));
  for (auto v : style.stages) ss.push_back(ops::resize_bilinear(t, v, h2, w2));
  SamInputs out;
  out.content = ops::concat_channels(t, cs);
  out.style = ops::concat_channels(t, ss);
  out.style_half = ops::resize_bilinear(t, style.aux, h2, w2);
  return out;
}

namespace ops {

/// Grid-sampled scaled dot-product cross attention.
/// q, k: h x w x d; v: h x w x c. Output: h x w x c.
template <class T>
Var grid_attention(Tape<T>& t, Var q, Var k, Var v, const SamplingGrid& grid) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& V = t.value(v);
  require_same_shape(Q.shape(), K.shape(), "grid_attention q/k");
  if (V.h() != Q.h() || V.w() != Q.w()) throw ShapeError("grid_attention: value spatial mismatch");
  if (grid.candidates() == 0) throw DomainError("grid_attention: empty sampling grid");
  const std::size_t H = Q.h(), W = Q.w(), D = Q.c(), C = V.c(), N = grid.candidates();
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));

  // Candidate pixel index per (coordinate, n) and the attention weights.
  auto src = std::make_shared<std::vector<std::size_t>>(H * W * N);
  auto weights = std::make_shared<std::vector<T>>(H * W * N);
  Tensor<T> y(Shape{H, W, C});
  parallel_rows(H, [&](std::size_t i) {
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t p = i * W + j;
      const T* qp = Q.data() + p * D;
      std::size_t* sp = src->data() + p * N;
      T* wp = weights->data() + p * N;
      for (std::size_t n = 0; n < N; ++n) {
        const auto [dy, dx] = grid.offsets[n];
        const std::size_t yy = clamp_index(static_cast<std::ptrdiff_t>(i) + dy, H);
        const std::size_t xx = clamp_index(static_cast<std::ptrdiff_t>(j) + dx, W);
        sp[n] = yy * W + xx;
        const T* kp = K.data() + sp[n] * D;
        T dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += qp[d] * kp[d];
        wp[n] = dot * inv_sqrt_d;
      }
      softmax_inplace(std::span<T>(wp, N));
      T* out = y.data() + p * C;
      for (std::size_t n = 0; n < N; ++n) {
        const T* vp = V.data() + sp[n] * C;
        for (std::size_t ch = 0; ch < C; ++ch) out[ch] += wp[n] * vp[ch];
      }
    }
  });

  return t.record(std::move(y), {q, k, v},
                  [q, k, v, src, weights, H, W, D, C, N, inv_sqrt_d](Tape<T>& tp,
                                                                     const Tensor<T>& g) {
    const auto& Qv = tp.value(q);
    const auto& Kv = tp.value(k);
    const auto& Vv = tp.value(v);
    auto* gq = tp.grad_slot(q);
    auto* gk = tp.grad_slot(k);
    auto* gv = tp.grad_slot(v);
    std::vector<T> dlogit(N);
    for (std::size_t p = 0; p < H * W; ++p) {
      const std::size_t* sp = src->data() + p * N;
      const T* wp = weights->data() + p * N;
      const T* gp = g.data() + p * C;
      T mean_dw = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* vp = Vv.data() + sp[n] * C;
        T dw = 0;
        for (std::size_t ch = 0; ch < C; ++ch) dw += gp[ch] * vp[ch];
        dlogit[n] = dw;
        mean_dw += wp[n] * dw;
        if (gv) {
          T* dv = gv->data() + sp[n] * C;
          for (std::size_t ch = 0; ch < C; ++ch) dv[ch] += wp[n] * gp[ch];
        }
      }
      for (std::size_t n = 0; n < N; ++n) dlogit[n] = wp[n] * (dlogit[n] - mean_dw) * inv_sqrt_d;
      const T* qp = Qv.data() + p * D;
      for (std::size_t n = 0; n < N; ++n) {
        const T* kp = Kv.data() + sp[n] * D;
        if (gq) {
          T* dq = gq->data() + p * D;
          for (std::size_t d = 0; d < D; ++d) dq[d] += dlogit[n] * kp[d];
        }
        if (gk) {
          T* dk = gk->data() + sp[n] * D;
          for (std::size_t d = 0; d < D; ++d) dk[d] += dlogit[n] * qp[d];
        }
      }
    }
  });
}

}  // namespace ops

/// Query/key projections of the pixel-sampling stage.
template <class T>
class AttnPixamp {
 public:
  AttnPixamp() = default;
  AttnPixamp(std::size_t d_s, std::size_t k, std::size_t m, Rng& rng)
      : query_("attn_pixamp.query", kContentBankChannels, d_s, 1, 1, 1, rng, false),
        key_("attn_pixamp.key", kStyleBankChannels, d_s, 1, 1, 1, rng, false),
        grid_(SamplingGrid::make(k, m)) {}

  const SamplingGrid& grid() const { return grid_; }

  /// Half-resolution rendered image from pre-aligned inputs.
  Var render(Tape<T>& t, const SamInputs& in) {
    Var q = query_.forward(t, in.content);
    Var kk = key_.forward(t, in.style);
    return ops::grid_attention(t, q, kk, in.style_half, grid_);
  }

  Var render(Tape<T>& t, const FeatureBank& content, const FeatureBank& style) {
    return render(t, build_sam_inputs(t, content, style));
  }

  void collect(ParamList<T>& out) {
    query_.collect(out);
    key_.collect(out);
  }

 private:
  Conv2d<T> query_, key_;
  SamplingGrid grid_;
};

}  // namespace aprnet
