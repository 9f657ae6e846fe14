#pragma once

// Four-stage fully convolutional encoders. Each stage runs a strided 3x3 main
// path (two convs) alongside a strided highway conv and sums the two.

#include <array>
#include <string>

#include "aprnet/layers.hpp"

namespace aprnet {

inline constexpr std::array<std::size_t, 4> kStageChannels{32, 64, 128, 256};
inline constexpr std::array<std::size_t, 4> kStageStrides{2, 2, 2, 1};
inline constexpr std::size_t kHighwayChannels = 256;
inline constexpr std::size_t kStyleBankChannels = 32 + 64 + 128 + 256;
inline constexpr std::size_t kContentBankChannels = kStyleBankChannels + kHighwayChannels;

/// Stage outputs s1..s4 plus one auxiliary entry: the raw style image for a
/// style bank, the full-resolution highway tensor for a content bank.
struct FeatureBank {
  std::array<Var, 4> stages{};
  Var aux{};
  bool is_content = false;
};

template <class T>
class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
               std::size_t highway_kernel, Rng& rng)
      : main1_(name + ".main1", in, out, 3, 3, stride, rng),
        main2_(name + ".main2", out, out, 3, 3, 1, rng),
        highway_(name + ".highway", in, out, highway_kernel, highway_kernel, stride, rng,
                 false) {}

  Var forward(Tape<T>& t, Var x) {
    Var m = lrelu(t, main1_.forward(t, x));
    m = lrelu(t, main2_.forward(t, m));
    return ops::add(t, m, highway_.forward(t, x));
  }

  void collect(ParamList<T>& out) {
    main1_.collect(out);
    main2_.collect(out);
    highway_.collect(out);
  }

 private:
  Conv2d<T> main1_, main2_, highway_;
};

enum class EncoderKind { content, style };

template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderKind kind, Rng& rng) : kind_(kind) {
    const bool content = kind == EncoderKind::content;
    const std::string prefix = content ? "content_encoder" : "style_encoder";
    std::size_t in = content ? 1 : 3;
    const std::size_t highway_kernel = content ? 2 : 1;
    for (std::size_t s = 0; s < 4; ++s) {
      stages_[s] = EncoderStage<T>(prefix + ".stage" + std::to_string(s + 1), in,
                                   kStageChannels[s], kStageStrides[s], highway_kernel, rng);
      in = kStageChannels[s];
    }
    if (content) {
      full_res_ = Conv2d<T>(prefix + ".full_res_highway", 1, kHighwayChannels, 1, 1, 1, rng,
                            false);
    }
  }

  EncoderKind kind() const { return kind_; }

  FeatureBank encode(Tape<T>& t, Var image) {
    const Shape s = t.shape(image);
    const std::size_t want_c = kind_ == EncoderKind::content ? 1 : 3;
    if (s.c != want_c) {
      throw ShapeError("encoder: expected " + std::to_string(want_c) + " input channels, got " +
                       to_string(s));
    }
    if (s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
      throw ShapeError("encoder: input " + to_string(s) + " must have H and W divisible by 8");
    }
    FeatureBank bank;
    bank.is_content = kind_ == EncoderKind::content;
    Var x = image;
    for (std::size_t k = 0; k < 4; ++k) {
      x = stages_[k].forward(t, x);
      bank.stages[k] = x;
    }
    bank.aux = bank.is_content ? full_res_.forward(t, image) : image;
    return bank;
  }

  void collect(ParamList<T>& out) {
    for (auto& st : stages_) st.collect(out);
    if (kind_ == EncoderKind::content) full_res_.collect(out);
  }

 private:
  EncoderKind kind_ = EncoderKind::style;
  std::array<EncoderStage<T>, 4> stages_;
  Conv2d<T> full_res_;
};

/// Content skeleton must be binary.
template <class T>
void require_binary(const Tensor<T>& img) {
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img[i] != T(0) && img[i] != T(1)) {
      throw DomainError("content image must be binary (values 0 or 1)");
    }
  }
}

template <class T>
FeatureBank encode_content(Tape<T>& t, Encoder<T>& enc, Var skeleton) {
  if (enc.kind() != EncoderKind::content) throw ConfigError("encode_content: style encoder given");
  require_binary(t.value(skeleton));
  return enc.encode(t, skeleton);
}

template <class T>
FeatureBank encode_style(Tape<T>& t, Encoder<T>& enc, Var style) {
  if (enc.kind() != EncoderKind::style) throw ConfigError("encode_style: content encoder given");
  return enc.encode(t, style);
}

}  // namespace aprnet
