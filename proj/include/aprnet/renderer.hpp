#pragma once

// Assembly of the rendering systems:
//
//   baseline            stage 1 ModConv stack + stage 2 ModConv stack, style vectors
//   pixymod             same stacks, style tensors from plain bank concatenation
//   pixymod+attnmusf    same stacks, style tensors from AttnMuSF
//   pixymod+attnpixamp  stage 1 AttnPixamp, stage 2 stack with plain style tensors
//   aprnet              stage 1 AttnPixamp, stage 2 stack with AttnMuSF
//
// Stage 1 works at H/2 x W/2, stage 2 at H x W; the two images are summed.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aprnet/attn_musf.hpp"
#include "aprnet/attn_pixamp.hpp"
#include "aprnet/encoders.hpp"
#include "aprnet/pixy_mod.hpp"

namespace aprnet {

enum class Variant { baseline, pixymod, pixymod_attnmusf, pixymod_attnpixamp, aprnet };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::pixymod: return "pixymod";
    case Variant::pixymod_attnmusf: return "pixymod+attnmusf";
    case Variant::pixymod_attnpixamp: return "pixymod+attnpixamp";
    case Variant::aprnet: return "aprnet";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::baseline, Variant::pixymod, Variant::pixymod_attnmusf,
                 Variant::pixymod_attnpixamp, Variant::aprnet}) {
    if (s == variant_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + s +
                    "' (expected baseline, pixymod, pixymod+attnmusf, pixymod+attnpixamp, aprnet)");
}

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v{Variant::baseline, Variant::pixymod,
                                      Variant::pixymod_attnmusf, Variant::pixymod_attnpixamp,
                                      Variant::aprnet};
  return v;
}

struct RenderConfig {
  Variant variant = Variant::aprnet;
  std::size_t k = 5;
  std::size_t m = 4;
  std::size_t d_s = 64;
  std::size_t d_f = 64;
  std::vector<std::size_t> channel_plan{128, 64, 64};
  double eps = kDemodEpsilon;
  std::uint64_t seed = 0;

  bool uses_pixamp() const {
    return variant == Variant::pixymod_attnpixamp || variant == Variant::aprnet;
  }
};

enum class StyleMode { vector, plain, musf };

inline StyleMode style_mode(Variant v) {
  switch (v) {
    case Variant::baseline: return StyleMode::vector;
    case Variant::pixymod:
    case Variant::pixymod_attnpixamp: return StyleMode::plain;
    case Variant::pixymod_attnmusf:
    case Variant::aprnet: return StyleMode::musf;
  }
  return StyleMode::plain;
}

/// Shared per-stage inputs for style construction.
struct StyleContext {
  Var style_cat;     // H/8 x W/8 x 480
  Var pooled;        // 1 x 1 x 480, global average of style_cat
  Var plain_cat;     // working size x 480
  Var content_cat;   // working size x 736
  std::size_t h = 0, w = 0;
};

/// Produces the style tensor for one modulation.
template <class T>
class StyleProvider {
 public:
  StyleProvider() = default;
  StyleProvider(const std::string& name, StyleMode mode, std::size_t channels,
                std::size_t query_in, std::size_t d_f, Rng& rng)
      : mode_(mode) {
    if (mode == StyleMode::musf) {
      musf_ = AttnMuSF<T>(name + ".attn_musf", query_in, channels, d_f, rng);
    } else {
      proj_ = Conv2d<T>(name + ".style_proj", kStyleBankChannels, channels, 1, 1, 1, rng, false);
    }
  }

  StyleMode mode() const { return mode_; }

  /// Style vector (1 x 1 x I) of the baseline; only valid for StyleMode::vector.
  Var style_vector(Tape<T>& t, const StyleContext& ctx) { return proj_.forward(t, ctx.pooled); }

  Var forward(Tape<T>& t, const StyleContext& ctx, Var query_source,
              std::vector<Tensor<T>>* attention_sink) {
    switch (mode_) {
      case StyleMode::vector:
        return ops::resize_bilinear(t, style_vector(t, ctx), ctx.h, ctx.w);
      case StyleMode::plain:
        return proj_.forward(t, ctx.plain_cat);
      case StyleMode::musf: {
        auto out = musf_.forward(t, query_source, ctx.style_cat);
        if (attention_sink != nullptr) attention_sink->push_back(std::move(out.attention));
        return out.style;
      }
    }
    throw ConfigError("unknown style mode");
  }

  void collect(ParamList<T>& out) {
    if (mode_ == StyleMode::musf) {
      musf_.collect(out);
    } else {
      proj_.collect(out);
    }
  }

 private:
  StyleMode mode_ = StyleMode::plain;
  Conv2d<T> proj_;
  AttnMuSF<T> musf_;
};

/// A ModConv stack together with its per-modulation style providers.
template <class T>
class ModulatedStage {
 public:
  ModulatedStage() = default;
  ModulatedStage(const std::string& name, StyleMode mode, const RenderConfig& cfg, Rng& rng)
      : stack_(name, kHighwayChannels, cfg.channel_plan, rng, cfg.eps) {
    for (std::size_t i = 0; i < stack_.num_modulations(); ++i) {
      const std::size_t query_in = i == 0 ? kContentBankChannels : stack_.modulation_channels(i);
      styles_.emplace_back(name + ".style" + std::to_string(i), mode,
                           stack_.modulation_channels(i), query_in, cfg.d_f, rng);
    }
  }

  Var forward(Tape<T>& t, Var content, const StyleContext& ctx,
              std::vector<Tensor<T>>* attention_sink) {
    return stack_.forward(t, content, [&](std::size_t i, Var query) {
      Var q = i == 0 ? ctx.content_cat : query;
      return styles_.at(i).forward(t, ctx, q, attention_sink);
    });
  }

  std::vector<StyleProvider<T>>& styles() { return styles_; }
  PixyModStack<T>& stack() { return stack_; }

  void collect(ParamList<T>& out) {
    stack_.collect(out);
    for (auto& s : styles_) s.collect(out);
  }

 private:
  PixyModStack<T> stack_;
  std::vector<StyleProvider<T>> styles_;
};

template <class T>
struct RenderTrace {
  Var output;        // H x W x 3, unclamped
  Var stage2;        // I_r^(Mod)
  Var stage1;        // H/2 x W/2 x 3
  FeatureBank content_bank;
  FeatureBank style_bank;
  Var style_cat;
  std::vector<Tensor<T>> attention;  // stage-2 AttnMuSF maps, one per modulation
};

template <class T>
class Generator {
 public:
  explicit Generator(RenderConfig cfg) : cfg_(std::move(cfg)) {
    Rng rng(cfg_.seed);
    content_enc_ = Encoder<T>(EncoderKind::content, rng);
    style_enc_ = Encoder<T>(EncoderKind::style, rng);
    const StyleMode mode = style_mode(cfg_.variant);
    if (cfg_.uses_pixamp()) {
      pixamp_.emplace(cfg_.d_s, cfg_.k, cfg_.m, rng);
    } else {
      stage1_.emplace("stage1", mode, cfg_, rng);
    }
    stage2_ = ModulatedStage<T>("stage2", mode, cfg_, rng);
  }

  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  const RenderConfig& config() const { return cfg_; }

  RenderTrace<T> forward(Tape<T>& t, Var content, Var style) {
    const Shape sc = t.shape(content);
    const Shape ss = t.shape(style);
    if (sc.h != ss.h || sc.w != ss.w) {
      throw ShapeError("render: content " + to_string(sc) + " and style " + to_string(ss) +
                       " differ in size");
    }
    RenderTrace<T> tr;
    tr.content_bank = encode_content(t, content_enc_, content);
    tr.style_bank = encode_style(t, style_enc_, style);
    tr.style_cat = build_style_cat(t, tr.style_bank);
    const std::size_t H = sc.h, W = sc.w;

    if (pixamp_) {
      tr.stage1 = pixamp_->render(t, tr.content_bank, tr.style_bank);
    } else {
      auto ctx = make_context(t, tr, H / 2, W / 2);
      Var c_half = ops::resize_bilinear(t, tr.content_bank.aux, H / 2, W / 2);
      tr.stage1 = stage1_->forward(t, c_half, ctx, nullptr);
    }
    auto ctx = make_context(t, tr, H, W);
    tr.stage2 = stage2_.forward(t, tr.content_bank.aux, ctx, &tr.attention);
    tr.output = ops::fuse_stages(t, tr.stage2, tr.stage1);
    return tr;
  }

  /// Rendered image clamped to [0, 1].
  Tensor<T> render(const Tensor<T>& content, const Tensor<T>& style) {
    Tape<T> t;
    auto tr = forward(t, t.constant(content), t.constant(style));
    return clamp(t.value(tr.output), T(0), T(1));
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    content_enc_.collect(out);
    style_enc_.collect(out);
    if (pixamp_) pixamp_->collect(out);
    if (stage1_) stage1_->collect(out);
    stage2_.collect(out);
    return out;
  }

  Encoder<T>& content_encoder() { return content_enc_; }
  Encoder<T>& style_encoder() { return style_enc_; }
  std::optional<AttnPixamp<T>>& pixamp() { return pixamp_; }
  std::optional<ModulatedStage<T>>& stage1() { return stage1_; }
  ModulatedStage<T>& stage2() { return stage2_; }

 private:
  StyleContext make_context(Tape<T>& t, const RenderTrace<T>& tr, std::size_t h, std::size_t w) {
    StyleContext ctx;
    ctx.h = h;
    ctx.w = w;
    ctx.style_cat = tr.style_cat;
    switch (style_mode(cfg_.variant)) {
      case StyleMode::vector:
        ctx.pooled = ops::avg_pool_to(t, tr.style_cat, 1, 1);
        break;
      case StyleMode::plain: {
        std::vector<Var> parts;
        for (auto v : tr.style_bank.stages) parts.push_back(ops::resize_bilinear(t, v, h, w));
        ctx.plain_cat = ops::concat_channels(t, parts);
        break;
      }
      case StyleMode::musf: {
        std::vector<Var> parts;
        for (auto v : tr.content_bank.stages) parts.push_back(ops::resize_bilinear(t, v, h, w));
        parts.push_back(ops::resize_bilinear(t, tr.content_bank.aux, h, w));
        ctx.content_cat = ops::concat_channels(t, parts);
        break;
      }
    }
    return ctx;
  }

  RenderConfig cfg_;
  Encoder<T> content_enc_;
  Encoder<T> style_enc_;
  std::optional<AttnPixamp<T>> pixamp_;
  std::optional<ModulatedStage<T>> stage1_;
  ModulatedStage<T> stage2_;
};

}  // namespace aprnet
