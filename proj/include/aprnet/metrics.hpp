#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "aprnet/data_pipeline.hpp"

namespace aprnet {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on [0, 1] data; identical inputs give kPsnrCap.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  if (a.empty()) throw ShapeError("psnr: empty images");
  double sse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct SsimWindow {
  static constexpr std::size_t size = 11;
  static constexpr double sigma = 1.5;
  static constexpr double c1 = 0.01 * 0.01;
  static constexpr double c2 = 0.03 * 0.03;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline const std::array<double, SsimWindow::size>& ssim_taps() {
  static const auto taps = [] {
    std::array<double, SsimWindow::size> g{};
    const double r = (SsimWindow::size - 1) / 2.0;
    double s = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = static_cast<double>(i) - r;
      g[i] = std::exp(-d * d / (2 * SsimWindow::sigma * SsimWindow::sigma));
      s += g[i];
    }
    for (auto& v : g) v /= s;
    return g;
  }();
  return taps;
}

namespace detail {

/// Grayscale in double precision (same weights as to_gray).
template <class T>
std::vector<double> luma(const Tensor<T>& img) {
  const std::size_t P = img.h() * img.w();
  std::vector<double> g(P);
  if (img.c() == 1) {
    for (std::size_t p = 0; p < P; ++p) g[p] = static_cast<double>(img[p]);
    return g;
  }
  if (img.c() != 3) throw ShapeError("ssim: expected 1 or 3 channels, got " + to_string(img.shape()));
  for (std::size_t p = 0; p < P; ++p) {
    g[p] = 0.299 * static_cast<double>(img[3 * p]) + 0.587 * static_cast<double>(img[3 * p + 1]) +
           0.114 * static_cast<double>(img[3 * p + 2]);
  }
  return g;
}

}  // namespace detail

/// Mean SSIM over all fully-contained 11x11 windows of the grayscale images.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const std::size_t N = SsimWindow::size;
  if (a.h() < N || a.w() < N) {
    throw DomainError("ssim: image " + to_string(a.shape()) + " is smaller than the 11x11 window");
  }
  const auto ga = detail::luma(a);
  const auto gb = detail::luma(b);
  const std::size_t H = a.h(), W = a.w();
  const std::size_t OH = H - N + 1, OW = W - N + 1;
  const auto& g = ssim_taps();
  // Separable filtering: horizontal pass then vertical, for the five moments.
  std::array<std::vector<double>, 5> horiz;
  for (auto& v : horiz) v.assign(H * OW, 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < OW; ++x) {
      double m[5] = {0, 0, 0, 0, 0};
      for (std::size_t k = 0; k < N; ++k) {
        const double va = ga[y * W + x + k], vb = gb[y * W + x + k];
        m[0] += g[k] * va;
        m[1] += g[k] * vb;
        m[2] += g[k] * va * va;
        m[3] += g[k] * vb * vb;
        m[4] += g[k] * va * vb;
      }
      for (int i = 0; i < 5; ++i) horiz[static_cast<std::size_t>(i)][y * OW + x] = m[i];
    }
  }
  double total = 0;
  for (std::size_t y = 0; y < OH; ++y) {
    for (std::size_t x = 0; x < OW; ++x) {
      double m[5] = {0, 0, 0, 0, 0};
      for (std::size_t k = 0; k < N; ++k) {
        for (int i = 0; i < 5; ++i) m[i] += g[k] * horiz[static_cast<std::size_t>(i)][(y + k) * OW + x];
      }
      const double mu_a = m[0], mu_b = m[1];
      const double var_a = m[2] - mu_a * mu_a, var_b = m[3] - mu_b * mu_b;
      const double cov = m[4] - mu_a * mu_b;
      const double num = (2 * mu_a * mu_b + SsimWindow::c1) * (2 * cov + SsimWindow::c2);
      const double den = (mu_a * mu_a + mu_b * mu_b + SsimWindow::c1) * (var_a + var_b + SsimWindow::c2);
      // Exact 1 for identical windows regardless of rounding in num/den.
      total += num == den ? 1.0 : num / den;
    }
  }
  return total / static_cast<double>(OH * OW);
}

struct EvalRecord {
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::string variant;
  std::vector<EvalRecord> per_image;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

/// Renders every triplet and averages PSNR/SSIM against the ground truth.
using RenderFn = std::function<Image(const Image& content, const Image& style)>;

inline EvalReport evaluate(const std::vector<TrainingTriplet>& set, const RenderFn& render,
                           const std::string& variant) {
  if (set.empty()) throw DomainError("evaluate: empty validation set");
  EvalReport rep;
  rep.variant = variant;
  for (const auto& t : set) {
    const Image out = render(t.content, t.style);
    rep.per_image.push_back({psnr(out, t.ground_truth), ssim(out, t.ground_truth)});
  }
  for (const auto& r : rep.per_image) {
    rep.mean_psnr += r.psnr;
    rep.mean_ssim += r.ssim;
  }
  rep.mean_psnr /= static_cast<double>(rep.per_image.size());
  rep.mean_ssim /= static_cast<double>(rep.per_image.size());
  return rep;
}

inline EvalReport evaluate(const std::filesystem::path& dir, const RenderFn& render,
                           const std::string& variant) {
  return evaluate(load_dataset(dir), render, variant);
}

/// Two-column text table, one row per variant.
inline std::string format_report(const std::vector<EvalReport>& reports) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %10s %10s %8s\n", "Method", "PSNR", "SSIM", "images");
  s += buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%-22s %10.4f %10.6f %8zu\n", r.variant.c_str(), r.mean_psnr,
                  r.mean_ssim, r.per_image.size());
    s += buf;
  }
  return s;
}

}  // namespace aprnet
