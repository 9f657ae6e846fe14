#pragma once

// Central-difference gradient checks at 64-bit. Every trainable input is a
// Parameter<double>; analytic gradients come from one backward pass and are
// compared entrywise against (f(x+h) - f(x-h)) / 2h.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aprnet/renderer.hpp"
#include "aprnet/training.hpp"

namespace aprnet {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  std::size_t max_probes_per_tensor = 0;  // 0 = every entry
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  double max_error = 0;  // max |analytic - numeric| / (1 + |numeric|)
  std::size_t probes = 0;
  bool pass = false;
};

using ScalarFn = std::function<Var(Tape<double>&)>;

inline GradcheckResult gradcheck(const std::string& name, const ScalarFn& f,
                                 const ParamList<double>& params, const GradcheckOptions& opt = {}) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> t;
    t.backward(f(t));
  }
  auto eval = [&] {
    Tape<double> t;
    return t.value(f(t))[0];
  };
  GradcheckResult r;
  r.name = name;
  Rng rng(opt.seed);
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.max_probes_per_tensor != 0 && n > opt.max_probes_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_probes_per_tensor);
    }
    for (auto i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + opt.step;
      const double fp = eval();
      p->value[i] = orig - opt.step;
      const double fm = eval();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double err = std::abs(p->grad[i] - numeric) / (1 + std::abs(numeric));
      r.max_error = std::max(r.max_error, err);
      ++r.probes;
    }
  }
  r.pass = r.probes > 0 && r.max_error < opt.tolerance && std::isfinite(r.max_error);
  return r;
}

namespace detail {

inline Parameter<double> random_param(const std::string& name, Shape s, Rng& rng, double lo = -1,
                                      double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> v(s);
  for (auto& x : v.storage()) x = u(rng);
  return Parameter<double>(name, std::move(v));
}

/// Fixed random projection so that every output entry affects the scalar.
inline Var project(Tape<double>& t, Var x, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor<double> w(t.shape(x));
  for (auto& v : w.storage()) v = u(rng);
  return ops::sum(t, ops::mul(t, x, t.constant(std::move(w))));
}

}  // namespace detail

struct GradcheckCase {
  std::string name;
  std::function<GradcheckResult(const GradcheckOptions&)> run;
};

/// Operators and modules covered by the `gradcheck` subcommand.
inline std::vector<GradcheckCase> gradcheck_cases() {
  using detail::project;
  using detail::random_param;
  std::vector<GradcheckCase> cases;

  cases.push_back({"conv2d 3x3 stride 2", [](const GradcheckOptions& o) {
    Rng rng(1);
    auto x = random_param("x", {5, 6, 3}, rng);
    auto w = random_param("w", ConvWeight<double>::storage_shape(4, 3, 3, 3), rng);
    auto b = random_param("b", {1, 1, 4}, rng);
    return gradcheck("conv2d 3x3 stride 2", [&](Tape<double>& t) {
      return project(t, ops::conv2d(t, t.parameter(x), t.parameter(w), 3, 3, 2, Padding::same,
                                    t.parameter(b)), 11);
    }, {&x, &w, &b}, o);
  }});

  cases.push_back({"resize_bilinear", [](const GradcheckOptions& o) {
    Rng rng(2);
    auto x = random_param("x", {3, 5, 2}, rng);
    return gradcheck("resize_bilinear", [&](Tape<double>& t) {
      Var up = ops::resize_bilinear(t, t.parameter(x), 7, 4);
      return project(t, up, 12);
    }, {&x}, o);
  }});

  cases.push_back({"avg_pool_to", [](const GradcheckOptions& o) {
    Rng rng(3);
    auto x = random_param("x", {7, 9, 2}, rng);
    return gradcheck("avg_pool_to", [&](Tape<double>& t) {
      return project(t, ops::avg_pool_to(t, t.parameter(x), 3, 4), 13);
    }, {&x}, o);
  }});

  cases.push_back({"modconv", [](const GradcheckOptions& o) {
    Rng rng(4);
    auto c = random_param("c", {5, 5, 3}, rng);
    auto s = random_param("s", {5, 5, 3}, rng, 0.2, 1.5);
    auto w = random_param("w", ConvWeight<double>::storage_shape(2, 3, 3, 3), rng);
    return gradcheck("modconv", [&](Tape<double>& t) {
      return project(t, ops::modconv(t, t.parameter(c), t.parameter(s), t.parameter(w), 3, 3), 14);
    }, {&c, &s, &w}, o);
  }});

  cases.push_back({"ModConv stack", [](const GradcheckOptions& o) {
    Rng rng(5);
    PixyModStack<double> stack("stack", 4, {3, 3}, rng);
    auto c = random_param("c", {4, 5, 4}, rng);
    std::vector<Parameter<double>> styles;
    for (std::size_t i = 0; i < stack.num_modulations(); ++i) {
      styles.push_back(random_param("s" + std::to_string(i), {4, 5, stack.modulation_channels(i)},
                                    rng, 0.2, 1.5));
    }
    ParamList<double> params{&c};
    for (auto& s : styles) params.push_back(&s);
    stack.collect(params);
    return gradcheck("ModConv stack", [&](Tape<double>& t) {
      std::vector<Var> sv;
      for (auto& s : styles) sv.push_back(t.parameter(s));
      return project(t, stack.forward(t, t.parameter(c), sv), 15);
    }, params, o);
  }});

  cases.push_back({"AttnPixamp", [](const GradcheckOptions& o) {
    Rng rng(6);
    AttnPixamp<double> attn(4, 3, 1, rng);
    auto c = random_param("c", {4, 5, kContentBankChannels}, rng);
    auto s = random_param("s", {4, 5, kStyleBankChannels}, rng);
    auto img = random_param("img", {4, 5, 3}, rng, 0, 1);
    ParamList<double> params{&c, &s, &img};
    attn.collect(params);
    auto opt = o;
    if (opt.max_probes_per_tensor == 0) opt.max_probes_per_tensor = 200;
    return gradcheck("AttnPixamp", [&](Tape<double>& t) {
      SamInputs in{t.parameter(c), t.parameter(s), t.parameter(img)};
      return project(t, attn.render(t, in), 16);
    }, params, opt);
  }});

  cases.push_back({"AttnMuSF", [](const GradcheckOptions& o) {
    Rng rng(7);
    AttnMuSF<double> musf("musf", 5, 3, 4, rng);
    auto q = random_param("q", {8, 12, 5}, rng);
    auto sc = random_param("s_cat", {4, 6, kStyleBankChannels}, rng);
    ParamList<double> params{&q, &sc};
    musf.collect(params);
    auto opt = o;
    if (opt.max_probes_per_tensor == 0) opt.max_probes_per_tensor = 200;
    return gradcheck("AttnMuSF", [&](Tape<double>& t) {
      return project(t, musf.forward(t, t.parameter(q), t.parameter(sc)).style, 17);
    }, params, opt);
  }});

  cases.push_back({"content loss", [](const GradcheckOptions& o) {
    Rng rng(8);
    auto a = random_param("a", {4, 6, 3}, rng, 0, 1);
    auto b = random_param("b", {4, 6, 3}, rng, 0, 1);
    return gradcheck("content loss", [&](Tape<double>& t) {
      return content_loss(t, t.parameter(a), t.parameter(b));
    }, {&a, &b}, o);
  }});

  cases.push_back({"perceptual loss", [](const GradcheckOptions& o) {
    Rng rng(9);
    auto net = PerceptualNet<double>::seeded(3);
    auto a = random_param("a", {8, 8, 3}, rng, 0, 1);
    auto b = random_param("b", {8, 8, 3}, rng, 0, 1);
    return gradcheck("perceptual loss", [&](Tape<double>& t) {
      return perceptual_loss(t, t.parameter(a), t.parameter(b), net);
    }, {&a, &b}, o);
  }});

  // The discriminator loss sees the rendered image through a detach, so it
  // is checked against the real image and D's weights only.
  for (const bool generator_side : {true, false}) {
    const std::string name = generator_side ? "adversarial g_loss" : "adversarial d_loss";
    cases.push_back({name, [generator_side, name](const GradcheckOptions& o) {
      Rng rng(10);
      Discriminator<double> disc(rng);
      auto a = random_param("fake", {8, 8, 3}, rng, 0, 1);
      auto b = random_param("real", {8, 8, 3}, rng, 0, 1);
      ParamList<double> params{generator_side ? &a : &b};
      for (auto* p : disc.parameters()) params.push_back(p);
      auto opt = o;
      if (opt.max_probes_per_tensor == 0) opt.max_probes_per_tensor = 100;
      return gradcheck(name, [&](Tape<double>& t) {
        auto adv = adversarial_losses(t, disc, t.parameter(a), t.parameter(b));
        return generator_side ? adv.g_loss : adv.d_loss;
      }, params, opt);
    }});
  }

  return cases;
}

inline std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& opt = {}) {
  std::vector<GradcheckResult> out;
  for (const auto& c : gradcheck_cases()) out.push_back(c.run(opt));
  return out;
}

inline std::string format_gradcheck(const std::vector<GradcheckResult>& rs) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %8s %14s  %s\n", "operator", "probes", "max rel err", "result");
  s += buf;
  for (const auto& r : rs) {
    std::snprintf(buf, sizeof buf, "%-22s %8zu %14.3e  %s\n", r.name.c_str(), r.probes, r.max_error,
                  r.pass ? "PASS" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace aprnet
