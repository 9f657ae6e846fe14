#pragma once

// Deterministic numeric kernels (forward and adjoint) on Tensor. The
// autodiff layer and the model modules are built exclusively on these.

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "aprnet/tensor.hpp"

namespace aprnet {

// ---------------------------------------------------------------------------
// Threading. Work is split over independent output rows only, so results do
// not depend on the thread count.

inline std::atomic<int>& thread_count_storage() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_num_threads(int n) { thread_count_storage() = std::max(1, n); }
inline int num_threads() { return thread_count_storage(); }

template <class F>
void parallel_rows(std::size_t rows, F&& fn) {
  const auto nt = static_cast<std::size_t>(num_threads());
  if (nt <= 1 || rows < 2) {
    for (std::size_t r = 0; r < rows; ++r) fn(r);
    return;
  }
  const std::size_t workers = std::min(nt, rows);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t r = t; r < rows; r += workers) fn(r);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Elementwise helpers

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return y;
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(x[i], lo, hi);
  return y;
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  require_same_shape(dst.shape(), src.shape(), "add_into");
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// ---------------------------------------------------------------------------
// Convolution

enum class Padding { same, valid };

struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t kh = 1, kw = 1, stride = 1;
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;

  std::size_t patch_size() const { return kh * kw * in_c; }
  std::size_t out_pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1; }
};

/// Output size and padding. "same" follows the ceil(n / stride) rule with the
/// extra padding row/column, if any, on the bottom/right.
inline ConvGeometry conv_geometry(const Shape& in, std::size_t kh, std::size_t kw,
                                  std::size_t stride, Padding padding) {
  if (stride == 0) throw DomainError("conv2d: stride must be positive");
  if (kh == 0 || kw == 0) throw DomainError("conv2d: empty kernel");
  ConvGeometry g;
  g.in_h = in.h;
  g.in_w = in.w;
  g.in_c = in.c;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_h = (in.h + stride - 1) / stride;
    g.out_w = (in.w + stride - 1) / stride;
    const auto need_h = (g.out_h - 1) * stride + kh;
    const auto need_w = (g.out_w - 1) * stride + kw;
    g.pad_top = need_h > in.h ? (need_h - in.h) / 2 : 0;
    g.pad_left = need_w > in.w ? (need_w - in.w) / 2 : 0;
  } else {
    if (kh > in.h || kw > in.w) {
      throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                       " does not fit input " + to_string(in));
    }
    g.out_h = (in.h - kh) / stride + 1;
    g.out_w = (in.w - kw) / stride + 1;
  }
  return g;
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Patch matrix with one row per output pixel, columns ordered (dy, dx, i).
template <class T>
RowMatrix<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  const std::size_t K = g.patch_size();
  RowMatrix<T> cols(static_cast<Eigen::Index>(g.out_pixels()), static_cast<Eigen::Index>(K));
  const std::size_t C = g.in_c;
  parallel_rows(g.out_h, [&](std::size_t oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      T* row = cols.data() + (oy * g.out_w + ox) * K;
      for (std::size_t dy = 0; dy < g.kh; ++dy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + dy) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
          std::fill(row + dy * g.kw * C, row + (dy + 1) * g.kw * C, T(0));
          continue;
        }
        for (std::size_t dx = 0; dx < g.kw; ++dx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + dx) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill(row + (dy * g.kw + dx) * C, row + (dy * g.kw + dx + 1) * C, T(0));
            continue;
          }
          const T* src = x.data() + (static_cast<std::size_t>(iy) * g.in_w +
                                     static_cast<std::size_t>(ix)) * C;
          std::copy(src, src + C, row + (dy * g.kw + dx) * C);
        }
      }
    }
  });
  return cols;
}

/// Scatter-add adjoint of im2col.
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, Tensor<T>& dx) {
  const std::size_t K = g.patch_size();
  const std::size_t C = g.in_c;
  // Sequential over output rows: rows overlap in the input when kh > stride.
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const T* row = cols + (oy * g.out_w + ox) * K;
      for (std::size_t dy = 0; dy < g.kh; ++dy) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + dy) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t dxk = 0; dxk < g.kw; ++dxk) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + dxk) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          T* dst = dx.data() + (static_cast<std::size_t>(iy) * g.in_w +
                                static_cast<std::size_t>(ix)) * C;
          const T* src = row + (dy * g.kw + dxk) * C;
          for (std::size_t i = 0; i < C; ++i) dst[i] += src[i];
        }
      }
    }
  }
}

inline void check_conv_weight(const Shape& x, const Shape& w, std::size_t kh, std::size_t kw) {
  if (w.w != kh * kw) {
    throw ShapeError("conv2d: weight storage " + to_string(w) + " does not hold a " +
                     std::to_string(kh) + "x" + std::to_string(kw) + " kernel");
  }
  if (w.c != x.c) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c) +
                     " channels but weight expects " + std::to_string(w.c));
  }
}

/// y = w * x (+ bias). Weight tensor has shape (O, kh*kw, I).
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t kh, std::size_t kw,
                 std::size_t stride, Padding padding, const Tensor<T>* bias = nullptr) {
  check_conv_weight(x.shape(), w.shape(), kh, kw);
  const auto g = conv_geometry(x.shape(), kh, kw, stride, padding);
  const std::size_t O = w.h();
  const std::size_t K = g.patch_size();
  const std::size_t P = g.out_pixels();
  Tensor<T> y(Shape{g.out_h, g.out_w, O});
  ConstMatMap<T> W(w.data(), O, K);
  MatMap<T> Y(y.data(), P, O);
  if (g.is_pointwise()) {
    ConstMatMap<T> X(x.data(), P, K);
    Y.noalias() = X * W.transpose();
  } else {
    const auto cols = im2col(x, g);
    Y.noalias() = cols * W.transpose();
  }
  if (bias != nullptr) {
    if (bias->size() != O) throw ShapeError("conv2d: bias length mismatch");
    for (std::size_t p = 0; p < P; ++p) {
      T* row = y.data() + p * O;
      for (std::size_t o = 0; o < O; ++o) row[o] += (*bias)[o];
    }
  }
  return y;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvWeight<T>& w, std::size_t stride,
                 Padding padding) {
  return conv2d(x, w.values, w.kh, w.kw, stride, padding);
}

/// Accumulates the adjoints of conv2d. Any of dx / dw / dbias may be null.
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t kh, std::size_t kw,
                     std::size_t stride, Padding padding, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* dbias) {
  const auto g = conv_geometry(x.shape(), kh, kw, stride, padding);
  const std::size_t O = w.h();
  const std::size_t K = g.patch_size();
  const std::size_t P = g.out_pixels();
  ConstMatMap<T> dY(dy.data(), P, O);
  ConstMatMap<T> W(w.data(), O, K);
  if (dbias != nullptr) {
    for (std::size_t p = 0; p < P; ++p) {
      const T* row = dy.data() + p * O;
      for (std::size_t o = 0; o < O; ++o) (*dbias)[o] += row[o];
    }
  }
  if (g.is_pointwise()) {
    if (dw != nullptr) {
      ConstMatMap<T> X(x.data(), P, K);
      MatMap<T> dW(dw->data(), O, K);
      dW.noalias() += dY.transpose() * X;
    }
    if (dx != nullptr) {
      MatMap<T> dX(dx->data(), P, K);
      dX.noalias() += dY * W;
    }
    return;
  }
  if (dw != nullptr) {
    const auto cols = im2col(x, g);
    MatMap<T> dW(dw->data(), O, K);
    dW.noalias() += dY.transpose() * cols;
  }
  if (dx != nullptr) {
    RowMatrix<T> dcols(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(K));
    dcols.noalias() = dY * W;
    col2im_add(dcols.data(), g, *dx);
  }
}

// ---------------------------------------------------------------------------
// Softmax

/// Max-subtracted softmax. Throws on empty input.
template <class T>
void softmax_inplace(std::span<T> v) {
  if (v.empty()) throw DomainError("softmax: empty input");
  const T mx = *std::max_element(v.begin(), v.end());
  T sum = 0;
  for (auto& e : v) {
    e = std::exp(e - mx);
    sum += e;
  }
  const T inv = T(1) / sum;
  for (auto& e : v) e *= inv;
}

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.begin(), logits.end());
  softmax_inplace<T>(out);
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

// ---------------------------------------------------------------------------
// Bilinear resize, half-pixel centres, edge clamped.

struct LerpTap {
  std::size_t i0 = 0;
  std::size_t i1 = 0;
  double frac = 0.0;
};

inline std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, i1 == i0 ? 0.0 : src - static_cast<double>(i0)};
  }
  return taps;
}

inline void check_resize_target(std::size_t out_h, std::size_t out_w, const Shape& in) {
  if (out_h == 0 || out_w == 0) throw DomainError("resize_bilinear: zero target size");
  if (in.h == 0 || in.w == 0) throw DomainError("resize_bilinear: empty input");
}

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  check_resize_target(out_h, out_w, x.shape());
  if (out_h == x.h() && out_w == x.w()) return x;
  const auto ty = bilinear_taps(x.h(), out_h);
  const auto tx = bilinear_taps(x.w(), out_w);
  const std::size_t C = x.c();
  Tensor<T> y(Shape{out_h, out_w, C});
  parallel_rows(out_h, [&](std::size_t oy) {
    const auto& vy = ty[oy];
    const T b = static_cast<T>(vy.frac);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto& vx = tx[ox];
      const T a = static_cast<T>(vx.frac);
      const T* p00 = &x(vy.i0, vx.i0, 0);
      const T* p01 = &x(vy.i0, vx.i1, 0);
      const T* p10 = &x(vy.i1, vx.i0, 0);
      const T* p11 = &x(vy.i1, vx.i1, 0);
      T* dst = &y(oy, ox, 0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        // Lerp form keeps constants exact.
        const T top = p00[ch] + a * (p01[ch] - p00[ch]);
        const T bot = p10[ch] + a * (p11[ch] - p10[ch]);
        dst[ch] = top + b * (bot - top);
      }
    }
  });
  return y;
}

template <class T>
void resize_bilinear_backward(const Shape& in, const Tensor<T>& dy, Tensor<T>& dx) {
  if (dy.h() == in.h && dy.w() == in.w) {
    add_into(dx, dy);
    return;
  }
  const auto ty = bilinear_taps(in.h, dy.h());
  const auto tx = bilinear_taps(in.w, dy.w());
  const std::size_t C = in.c;
  for (std::size_t oy = 0; oy < dy.h(); ++oy) {
    const auto& vy = ty[oy];
    const T b = static_cast<T>(vy.frac);
    for (std::size_t ox = 0; ox < dy.w(); ++ox) {
      const auto& vx = tx[ox];
      const T a = static_cast<T>(vx.frac);
      const T w00 = (T(1) - a) * (T(1) - b), w01 = a * (T(1) - b);
      const T w10 = (T(1) - a) * b, w11 = a * b;
      const T* g = &dy(oy, ox, 0);
      T* d00 = &dx(vy.i0, vx.i0, 0);
      T* d01 = &dx(vy.i0, vx.i1, 0);
      T* d10 = &dx(vy.i1, vx.i0, 0);
      T* d11 = &dx(vy.i1, vx.i1, 0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        d00[ch] += w00 * g[ch];
        d01[ch] += w01 * g[ch];
        d10[ch] += w10 * g[ch];
        d11[ch] += w11 * g[ch];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive average pooling

struct Bin {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Bin i covers [floor(i*in/out), ceil((i+1)*in/out)).
inline std::vector<Bin> adaptive_bins(std::size_t in, std::size_t out) {
  std::vector<Bin> bins(out);
  for (std::size_t i = 0; i < out; ++i) {
    bins[i].begin = (i * in) / out;
    bins[i].end = ((i + 1) * in + out - 1) / out;
  }
  return bins;
}

inline void check_pool_target(const Shape& in, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw DomainError("avg_pool_to: zero target size");
  if (out_h > in.h || out_w > in.w) {
    throw DomainError("avg_pool_to: target " + std::to_string(out_h) + "x" +
                      std::to_string(out_w) + " larger than input " + to_string(in));
  }
}

template <class T>
Tensor<T> avg_pool_to(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  check_pool_target(x.shape(), out_h, out_w);
  using Acc = std::conditional_t<std::is_same_v<T, float>, double, long double>;
  const auto by = adaptive_bins(x.h(), out_h);
  const auto bx = adaptive_bins(x.w(), out_w);
  const std::size_t C = x.c();
  Tensor<T> y(Shape{out_h, out_w, C});
  std::vector<Acc> acc(C);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      std::fill(acc.begin(), acc.end(), Acc(0));
      for (std::size_t iy = by[oy].begin; iy < by[oy].end; ++iy) {
        for (std::size_t ix = bx[ox].begin; ix < bx[ox].end; ++ix) {
          const T* p = &x(iy, ix, 0);
          for (std::size_t ch = 0; ch < C; ++ch) acc[ch] += p[ch];
        }
      }
      const Acc n = static_cast<Acc>((by[oy].end - by[oy].begin) * (bx[ox].end - bx[ox].begin));
      for (std::size_t ch = 0; ch < C; ++ch) y(oy, ox, ch) = static_cast<T>(acc[ch] / n);
    }
  }
  return y;
}

template <class T>
void avg_pool_to_backward(const Shape& in, const Tensor<T>& dy, Tensor<T>& dx) {
  const auto by = adaptive_bins(in.h, dy.h());
  const auto bx = adaptive_bins(in.w, dy.w());
  const std::size_t C = in.c;
  for (std::size_t oy = 0; oy < dy.h(); ++oy) {
    for (std::size_t ox = 0; ox < dy.w(); ++ox) {
      const T inv = T(1) / static_cast<T>((by[oy].end - by[oy].begin) *
                                          (bx[ox].end - bx[ox].begin));
      const T* g = &dy(oy, ox, 0);
      for (std::size_t iy = by[oy].begin; iy < by[oy].end; ++iy) {
        for (std::size_t ix = bx[ox].begin; ix < bx[ox].end; ++ix) {
          T* d = &dx(iy, ix, 0);
          for (std::size_t ch = 0; ch < C; ++ch) d[ch] += g[ch] * inv;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <class T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const std::size_t h = xs[0]->h(), w = xs[0]->w();
  std::size_t c = 0;
  for (const auto* t : xs) {
    if (t->h() != h || t->w() != w) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(t->shape()) + " vs " +
                       to_string(xs[0]->shape()));
    }
    c += t->c();
  }
  Tensor<T> y(Shape{h, w, c});
  for (std::size_t p = 0; p < h * w; ++p) {
    T* dst = y.data() + p * c;
    for (const auto* t : xs) {
      const T* src = t->data() + p * t->c();
      dst = std::copy(src, src + t->c(), dst);
    }
  }
  return y;
}

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : xs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const Tensor<T>* const>(ptrs));
}

/// Channel slice [begin, begin + count) of x.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.c()) throw ShapeError("slice_channels: range out of bounds");
  Tensor<T> y(Shape{x.h(), x.w(), count});
  for (std::size_t p = 0; p < x.h() * x.w(); ++p) {
    const T* src = x.data() + p * x.c() + begin;
    std::copy(src, src + count, y.data() + p * count);
  }
  return y;
}

}  // namespace aprnet
