#pragma once

// Pixel-wise style modulation.
//
//   N = (W * (S o C)) / sqrt(W^2 * S^2 + eps)
//
// The numerator is a convolution of the modulated content; the denominator is
// the per-pixel activation std predicted under an i.i.d. unit-variance content
// assumption. Both are built from differentiable primitives, so the backward
// pass flows through the demodulation term as well.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aprnet/layers.hpp"

namespace aprnet {

inline constexpr double kDemodEpsilon = 1e-8;

namespace ops {

template <class T>
Var modconv(Tape<T>& t, Var content, Var style, Var weight, std::size_t kh, std::size_t kw,
            T eps = static_cast<T>(kDemodEpsilon)) {
  require_same_shape(t.shape(content), t.shape(style), "modconv content/style");
  Var modulated = mul(t, style, content);
  Var numer = conv2d(t, modulated, weight, kh, kw, 1, Padding::same);
  Var denom = conv2d(t, square(t, style), square(t, weight), kh, kw, 1, Padding::same);
  return div(t, numer, sqrt(t, add_scalar(t, denom, eps)));
}

}  // namespace ops

template <class T>
class ModConvLayer {
 public:
  ModConvLayer() = default;
  ModConvLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
               Rng& rng, bool activation = true, double eps = kDemodEpsilon)
      : weight_(name + ".weight", Tensor<T>(ConvWeight<T>::storage_shape(out, kernel, kernel, in))),
        kernel_(kernel), activation_(activation), eps_(static_cast<T>(eps)) {
    init_normal(weight_.value, fan_in_std(kernel * kernel * in, false), rng);
  }

  Var forward(Tape<T>& t, Var content, Var style) {
    Var w = t.parameter(weight_);
    Var n = ops::modconv(t, content, style, w, kernel_, kernel_, eps_);
    return activation_ ? lrelu(t, n) : n;
  }

  std::size_t in_channels() const { return weight_.value.c(); }
  std::size_t out_channels() const { return weight_.value.h(); }
  Parameter<T>& weight() { return weight_; }
  void collect(ParamList<T>& out) { out.push_back(&weight_); }

 private:
  Parameter<T> weight_;
  std::size_t kernel_ = 3;
  bool activation_ = true;
  T eps_ = static_cast<T>(kDemodEpsilon);
};

/// Stacked ModConv layers followed by a final modulation and a 1x1 conv to
/// RGB. One style tensor per modulation: layers().size() + 1 in total.
template <class T>
class PixyModStack {
 public:
  /// style_for(modulation index, query source) -> style tensor. The query
  /// source is the stack input for index 0, else the previous layer output.
  using StyleFn = std::function<Var(std::size_t, Var)>;

  PixyModStack() = default;
  PixyModStack(const std::string& name, std::size_t in_channels,
               const std::vector<std::size_t>& plan, Rng& rng, double eps = kDemodEpsilon) {
    if (plan.empty()) throw ConfigError("PixyMod channel plan must name at least one layer");
    std::size_t in = in_channels;
    channels_.push_back(in);
    for (std::size_t i = 0; i < plan.size(); ++i) {
      layers_.emplace_back(name + ".modconv" + std::to_string(i + 1), in, plan[i], 3, rng, true,
                           eps);
      in = plan[i];
      channels_.push_back(in);
    }
    // Small init on the RGB head so the untrained stack adds little on top of
    // the stage-1 image.
    to_rgb_ = Conv2d<T>(name + ".to_rgb", in, 3, 1, 1, 1, rng, false, true, 0.1);
  }

  std::size_t num_modulations() const { return layers_.size() + 1; }
  /// Channel count of the content tensor modulated at index i.
  std::size_t modulation_channels(std::size_t i) const { return channels_.at(i); }

  Var forward(Tape<T>& t, Var content, const StyleFn& style_for) {
    if (t.shape(content).c != channels_[0]) {
      throw ShapeError("PixyMod: content has " + std::to_string(t.shape(content).c) +
                       " channels, stack expects " + std::to_string(channels_[0]));
    }
    Var x = content;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Var s = checked_style(t, style_for(i, x), x, i);
      x = layers_[i].forward(t, x, s);
    }
    Var s = checked_style(t, style_for(layers_.size(), x), x, layers_.size());
    return to_rgb_.forward(t, ops::mul(t, s, x));
  }

  Var forward(Tape<T>& t, Var content, std::span<const Var> styles) {
    if (styles.size() != num_modulations()) {
      throw ConfigError("PixyMod: " + std::to_string(num_modulations()) +
                        " style tensors required, got " + std::to_string(styles.size()));
    }
    return forward(t, content, [&](std::size_t i, Var) { return styles[i]; });
  }

  void collect(ParamList<T>& out) {
    for (auto& l : layers_) l.collect(out);
    to_rgb_.collect(out);
  }

  std::vector<ModConvLayer<T>>& layers() { return layers_; }

 private:
  static Var checked_style(Tape<T>& t, Var s, Var x, std::size_t i) {
    if (!s.valid()) throw ConfigError("PixyMod: missing style tensor for modulation " + std::to_string(i));
    if (t.shape(s) != t.shape(x)) {
      throw ShapeError("PixyMod: style tensor " + to_string(t.shape(s)) + " does not match content " +
                       to_string(t.shape(x)) + " at modulation " + std::to_string(i));
    }
    return s;
  }

  std::vector<ModConvLayer<T>> layers_;
  std::vector<std::size_t> channels_;
  Conv2d<T> to_rgb_;
};

namespace ops {

/// I_r = I_mod + upsample(I_sam), unclamped.
template <class T>
Var fuse_stages(Tape<T>& t, Var mod, Var sam) {
  const Shape sm = t.shape(mod);
  const Shape ss = t.shape(sam);
  if (sm.c != 3 || ss.c != 3) throw ShapeError("fuse_stages: both stages must be RGB");
  if (ss.h * 2 != sm.h || ss.w * 2 != sm.w) {
    throw ShapeError("fuse_stages: stage-1 image " + to_string(ss) +
                     " is not half the size of " + to_string(sm));
  }
  return add(t, mod, resize_bilinear(t, sam, sm.h, sm.w));
}

}  // namespace ops

/// Image-space fusion, clamped to [0, 1].
template <class T>
Tensor<T> fuse_stages(const Tensor<T>& mod, const Tensor<T>& sam) {
  Tape<T> t;
  Var out = ops::fuse_stages(t, t.constant(mod), t.constant(sam));
  return clamp(t.value(out), T(0), T(1));
}

}  // namespace aprnet
