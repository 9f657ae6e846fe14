#pragma once

// Weighted content / perceptual / per-pixel adversarial loss and a small
// alternating generator/discriminator training loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aprnet/checkpoint.hpp"
#include "aprnet/data_pipeline.hpp"
#include "aprnet/renderer.hpp"

namespace aprnet {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double content = 10.0;
  double perceptual = 1.0;
  double adversarial = 1.0;

  void validate() const {
    if (content < 0 || perceptual < 0 || adversarial < 0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (content == 0 && perceptual == 0 && adversarial == 0) {
      throw ConfigError("at least one loss weight must be positive");
    }
  }
};

/// Patch discriminator: four 3x3 convs, strides 2,2,2,1, logits at H/8 x W/8.
template <class T>
class Discriminator {
 public:
  Discriminator() = default;
  explicit Discriminator(Rng& rng)
      : c1_("disc.conv1", 3, 32, 3, 3, 2, rng),
        c2_("disc.conv2", 32, 64, 3, 3, 2, rng),
        c3_("disc.conv3", 64, 128, 3, 3, 2, rng),
        c4_("disc.conv4", 128, 1, 3, 3, 1, rng, false) {}

  Var forward(Tape<T>& t, Var image) {
    Var h = lrelu(t, c1_.forward(t, image));
    h = lrelu(t, c2_.forward(t, h));
    h = lrelu(t, c3_.forward(t, h));
    return c4_.forward(t, h);
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    c1_.collect(out);
    c2_.collect(out);
    c3_.collect(out);
    c4_.collect(out);
    return out;
  }

 private:
  Conv2d<T> c1_, c2_, c3_, c4_;
};

/// Frozen feature extractor for the perceptual loss. Each stage is a conv
/// followed by leaky-relu; its weights enter the tape as constants.
template <class T>
class PerceptualNet {
 public:
  struct Stage {
    Tensor<T> weight;  // (O, kh*kw, I)
    std::size_t kernel = 3;
    std::size_t stride = 1;
  };

  PerceptualNet() = default;
  explicit PerceptualNet(std::vector<Stage> stages) : stages_(std::move(stages)) {}

  static constexpr std::array<std::size_t, 5> kChannels{16, 32, 64, 64, 64};
  static constexpr std::array<std::size_t, 5> kStrides{1, 2, 2, 2, 2};

  static PerceptualNet seeded(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Stage> stages;
    std::size_t in = 3;
    for (std::size_t i = 0; i < kChannels.size(); ++i) {
      Stage s;
      s.weight = Tensor<T>(ConvWeight<T>::storage_shape(kChannels[i], 3, 3, in));
      init_normal(s.weight, fan_in_std(9 * in, true), rng);
      s.stride = kStrides[i];
      stages.push_back(std::move(s));
      in = kChannels[i];
    }
    return PerceptualNet(std::move(stages));
  }

  /// Stage weights named perceptual.stage<i>.weight, square kernels, the
  /// default stride schedule.
  static PerceptualNet from_checkpoint(const Checkpoint& ck) {
    std::vector<Stage> stages;
    for (std::size_t i = 0; i < kStrides.size(); ++i) {
      const std::string name = "perceptual.stage" + std::to_string(i + 1) + ".weight";
      auto it = std::find_if(ck.tensors.begin(), ck.tensors.end(),
                             [&](const CheckpointEntry& e) { return e.name == name; });
      if (it == ck.tensors.end()) throw IoError("perceptual weights: missing " + name);
      const auto k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(it->shape.w))));
      if (k * k != it->shape.w) throw ShapeError("perceptual weights: " + name + " is not a square kernel");
      if (!stages.empty() && stages.back().weight.h() != it->shape.c) {
        throw ShapeError("perceptual weights: " + name + " does not chain with the previous stage");
      }
      Stage st;
      st.weight = Tensor<T>(it->shape);
      for (std::size_t j = 0; j < it->values.size(); ++j) st.weight[j] = static_cast<T>(it->values[j]);
      st.kernel = k;
      st.stride = kStrides[i];
      stages.push_back(std::move(st));
    }
    return PerceptualNet(std::move(stages));
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      CheckpointEntry e;
      e.name = "perceptual.stage" + std::to_string(i + 1) + ".weight";
      e.shape = stages_[i].weight.shape();
      for (auto v : stages_[i].weight.storage()) e.values.push_back(static_cast<float>(v));
      ck.tensors.push_back(std::move(e));
    }
    return ck;
  }

  std::size_t num_stages() const { return stages_.size(); }
  const std::vector<Stage>& stages() const { return stages_; }

  std::vector<Var> features(Tape<T>& t, Var image) const {
    std::vector<Var> out;
    Var h = image;
    for (const auto& s : stages_) {
      Var w = t.constant(s.weight);
      h = lrelu(t, ops::conv2d(t, h, w, s.kernel, s.kernel, s.stride, Padding::same));
      out.push_back(h);
    }
    return out;
  }

 private:
  std::vector<Stage> stages_;
};

/// mean |I_r - I_g|
template <class T>
Var content_loss(Tape<T>& t, Var rendered, Var target) {
  return ops::l1_mean(t, rendered, target);
}

/// Sum over stages of the per-stage feature MSE.
template <class T>
Var perceptual_loss(Tape<T>& t, Var rendered, Var target, const PerceptualNet<T>& net) {
  require_same_shape(t.shape(rendered), t.shape(target), "perceptual_loss");
  if (net.num_stages() == 0) throw ConfigError("perceptual_loss: empty feature extractor");
  const auto fa = net.features(t, rendered);
  const auto fb = net.features(t, target);
  Var total = ops::mse_mean(t, fa[0], fb[0]);
  for (std::size_t i = 1; i < fa.size(); ++i) total = ops::add(t, total, ops::mse_mean(t, fa[i], fb[i]));
  return total;
}

struct AdversarialLosses {
  Var g_loss;  // BCE(D(I_r), 1)
  Var d_real;  // BCE(D(I_g), 1)
  Var d_fake;  // BCE(D(detach I_r), 0)
  Var d_loss;  // (d_real + d_fake) / 2
};

template <class T>
AdversarialLosses adversarial_losses(Tape<T>& t, Discriminator<T>& disc, Var rendered, Var target) {
  require_same_shape(t.shape(rendered), t.shape(target), "adversarial_losses");
  AdversarialLosses a;
  a.g_loss = ops::bce_with_logits_mean(t, disc.forward(t, rendered), T(1));
  a.d_real = ops::bce_with_logits_mean(t, disc.forward(t, target), T(1));
  a.d_fake = ops::bce_with_logits_mean(t, disc.forward(t, ops::detach(t, rendered)), T(0));
  a.d_loss = ops::scale(t, ops::add(t, a.d_real, a.d_fake), T(0.5));
  return a;
}

/// lambda_c L_c + lambda_p L_p + lambda_a L_a. Terms with zero weight are
/// left out of the graph (and may be invalid Vars).
template <class T>
Var total_loss(Tape<T>& t, const LossWeights& w, Var content, Var perceptual, Var adversarial) {
  w.validate();
  std::vector<Var> terms;
  if (w.content > 0) terms.push_back(ops::scale(t, content, static_cast<T>(w.content)));
  if (w.perceptual > 0) terms.push_back(ops::scale(t, perceptual, static_cast<T>(w.perceptual)));
  if (w.adversarial > 0) terms.push_back(ops::scale(t, adversarial, static_cast<T>(w.adversarial)));
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ops::add(t, total, terms[i]);
  return total;
}

// ---------------------------------------------------------------------------

template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const ParamList<T>& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    if (m_.size() != params.size()) throw ConfigError("Adam: parameter list changed size");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      if (p.grad.shape() != p.value.shape()) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = b1_ * m[i] + (1 - b1_) * g;
        const double vi = b2_ * v[i] + (1 - b2_) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p.value[i] -= static_cast<T>(lr_ * (mi / c1) / (std::sqrt(vi / c2) + eps_));
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_ = 2e-4, b1_ = 0.5, b2_ = 0.999, eps_ = 1e-8;
  std::size_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <class T>
void require_finite(const ParamList<T>& params, const std::string& what) {
  for (auto* p : params) {
    for (T v : p->value.storage()) {
      if (!std::isfinite(v)) throw TrainingError(what + " parameter " + p->name + " is not finite");
    }
  }
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  RenderConfig render{};
  LossWeights weights{};
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch = 2;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::uint64_t perceptual_seed = 7;
  std::string perceptual_weights;  // optional checkpoint replacing the seeded extractor
};

struct StepLog {
  std::size_t step = 0;
  double content = 0;
  double perceptual = 0;
  double adversarial = 0;
  double total = 0;
  double d_loss = 0;
};

/// Generator, discriminator, optimizers and the loss curve of one run.
class Trainer {
 public:
  using StepHook = std::function<void(const StepLog&, Trainer&)>;

  explicit Trainer(TrainConfig cfg)
      : cfg_([&] {
          cfg.weights.validate();
          cfg.render.seed = cfg.seed;
          return cfg;
        }()),
        gen_(cfg_.render),
        perceptual_(cfg_.perceptual_weights.empty()
                        ? PerceptualNet<float>::seeded(cfg_.perceptual_seed)
                        : PerceptualNet<float>::from_checkpoint(read_checkpoint(cfg_.perceptual_weights))),
        g_opt_(cfg_.lr, cfg_.beta1, cfg_.beta2),
        d_opt_(cfg_.lr, cfg_.beta1, cfg_.beta2),
        rng_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
    if (cfg_.batch == 0) throw ConfigError("batch size must be positive");
    Rng drng(cfg_.seed + 1);
    disc_ = Discriminator<float>(drng);
    g_params_ = gen_.parameters();
    d_params_ = disc_.parameters();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return gen_; }
  Discriminator<float>& discriminator() { return disc_; }
  const std::vector<StepLog>& curve() const { return curve_; }

  /// One generator update followed by one discriminator update (skipped
  /// when the adversarial weight is zero).
  StepLog step(const std::vector<TrainingTriplet>& data) {
    if (data.empty()) throw TrainingError("training set is empty");
    // Non-finite weights would otherwise surface as a domain error deep in
    // the forward pass.
    require_finite(g_params_, "generator");
    require_finite(d_params_, "discriminator");
    const auto batch = next_batch(data.size());
    const float inv_b = 1.0f / static_cast<float>(batch.size());
    const bool adversarial = cfg_.weights.adversarial > 0;

    StepLog log;
    log.step = curve_.size() + 1;
    zero_grads(g_params_);
    zero_grads(d_params_);
    std::vector<Tensor<float>> fakes;
    for (auto idx : batch) {
      const auto& tr = data[idx];
      Tape<float> t;
      Var c = t.constant(tr.content);
      Var s = t.constant(tr.style);
      Var g = t.constant(tr.ground_truth);
      auto trace = gen_.forward(t, c, s);
      Var lc = content_loss(t, trace.output, g);
      Var lp{}, la{};
      if (cfg_.weights.perceptual > 0) lp = perceptual_loss(t, trace.output, g, perceptual_);
      if (adversarial) {
        la = ops::bce_with_logits_mean(t, disc_.forward(t, trace.output), 1.0f);
        fakes.push_back(t.value(trace.output));
      }
      Var total = total_loss(t, cfg_.weights, lc, lp, la);
      const double tv = t.value(total)[0];
      if (!std::isfinite(tv)) {
        throw TrainingError("loss diverged at step " + std::to_string(log.step) +
                            " (total = " + std::to_string(tv) + ")");
      }
      t.backward(ops::scale(t, total, inv_b));
      log.content += t.value(lc)[0] * inv_b;
      if (lp.valid()) log.perceptual += t.value(lp)[0] * inv_b;
      if (la.valid()) log.adversarial += t.value(la)[0] * inv_b;
      log.total += tv * inv_b;
    }
    g_opt_.step(g_params_);

    if (adversarial) {
      zero_grads(d_params_);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Tape<float> t;
        Var real = disc_.forward(t, t.constant(data[batch[b]].ground_truth));
        Var fake = disc_.forward(t, t.constant(fakes[b]));
        Var d = ops::scale(t, ops::add(t, ops::bce_with_logits_mean(t, real, 1.0f),
                                       ops::bce_with_logits_mean(t, fake, 0.0f)),
                           0.5f);
        t.backward(ops::scale(t, d, inv_b));
        log.d_loss += t.value(d)[0] * inv_b;
      }
      d_opt_.step(d_params_);
    }
    curve_.push_back(log);
    return log;
  }

  void run(const std::vector<TrainingTriplet>& data, std::size_t steps, const StepHook& hook = {}) {
    for (std::size_t i = 0; i < steps; ++i) {
      const auto log = step(data);
      if (hook) hook(log, *this);
    }
  }

  /// Mean content loss of the current generator over a whole set.
  double mean_content_loss(const std::vector<TrainingTriplet>& data) {
    double s = 0;
    for (const auto& tr : data) {
      Tape<float> t;
      auto trace = gen_.forward(t, t.constant(tr.content), t.constant(tr.style));
      s += t.value(content_loss(t, trace.output, t.constant(tr.ground_truth)))[0];
    }
    return s / static_cast<double>(data.size());
  }

  Checkpoint checkpoint() {
    std::map<std::string, std::string> meta{
        {"variant", variant_name(cfg_.render.variant)},
        {"k", std::to_string(cfg_.render.k)},
        {"m", std::to_string(cfg_.render.m)},
        {"d_s", std::to_string(cfg_.render.d_s)},
        {"d_f", std::to_string(cfg_.render.d_f)},
        {"steps", std::to_string(curve_.size())},
        {"seed", std::to_string(cfg_.seed)}};
    std::string plan;
    for (auto c : cfg_.render.channel_plan) plan += (plan.empty() ? "" : ",") + std::to_string(c);
    meta["channel_plan"] = plan;
    return make_checkpoint(gen_.parameters(), meta);
  }

 private:
  std::vector<std::size_t> next_batch(std::size_t n) {
    std::vector<std::size_t> out;
    while (out.size() < cfg_.batch) {
      if (cursor_ >= order_.size()) {
        order_.resize(n);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  TrainConfig cfg_;
  Generator<float> gen_;
  Discriminator<float> disc_;
  PerceptualNet<float> perceptual_;
  Adam<float> g_opt_, d_opt_;
  ParamList<float> g_params_, d_params_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<StepLog> curve_;
};

/// Restores a generator from a checkpoint written by Trainer::checkpoint().
inline RenderConfig render_config_from(const Checkpoint& ck, RenderConfig base = {}) {
  auto get = [&](const char* key) -> const std::string* {
    auto it = ck.meta.find(key);
    return it == ck.meta.end() ? nullptr : &it->second;
  };
  if (auto* v = get("variant")) base.variant = parse_variant(*v);
  if (auto* v = get("k")) base.k = std::stoul(*v);
  if (auto* v = get("m")) base.m = std::stoul(*v);
  if (auto* v = get("d_s")) base.d_s = std::stoul(*v);
  if (auto* v = get("d_f")) base.d_f = std::stoul(*v);
  if (auto* v = get("channel_plan")) {
    base.channel_plan.clear();
    std::size_t pos = 0;
    while (pos < v->size()) {
      const auto next = v->find(',', pos);
      base.channel_plan.push_back(std::stoul(v->substr(pos, next - pos)));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
  }
  return base;
}

}  // namespace aprnet
