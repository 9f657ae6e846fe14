#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "aprnet/autodiff.hpp"

namespace aprnet {

using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.2;

/// Fan-in scaled normal init. Samples are drawn at 64-bit and cast so that a
/// float and a double model built from the same seed hold the same values.
template <class T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng) * stddev);
}

/// He-style gain for a conv followed by leaky-relu; 1 for a linear output.
inline double fan_in_std(std::size_t fan_in, bool followed_by_leaky) {
  const double gain = followed_by_leaky ? std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope)) : 1.0;
  return gain / std::sqrt(static_cast<double>(fan_in));
}

/// Plain convolution with optional bias.
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kh,
         std::size_t kw, std::size_t stride, Rng& rng, bool leaky_after = true,
         bool with_bias = true, double init_scale = 1.0)
      : weight_(name + ".weight", Tensor<T>(ConvWeight<T>::storage_shape(out, kh, kw, in))),
        kh_(kh), kw_(kw), stride_(stride) {
    init_normal(weight_.value, init_scale * fan_in_std(kh * kw * in, leaky_after), rng);
    if (with_bias) bias_.emplace(name + ".bias", Tensor<T>(Shape{1, 1, out}));
  }

  Var forward(Tape<T>& t, Var x) {
    Var w = t.parameter(weight_);
    std::optional<Var> b;
    if (bias_) b = t.parameter(*bias_);
    return ops::conv2d(t, x, w, kh_, kw_, stride_, Padding::same, b);
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
  }

  std::size_t in_channels() const { return weight_.value.c(); }
  std::size_t out_channels() const { return weight_.value.h(); }
  Parameter<T>& weight() { return weight_; }
  std::optional<Parameter<T>>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  std::optional<Parameter<T>> bias_;
  std::size_t kh_ = 1, kw_ = 1, stride_ = 1;
};

template <class T>
Var lrelu(Tape<T>& t, Var x) {
  return ops::leaky_relu(t, x, static_cast<T>(kLeakySlope));
}

}  // namespace aprnet
