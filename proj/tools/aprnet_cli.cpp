// aprnet command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "aprnet/aprnet.hpp"
#include "selftest.hpp"

namespace {

using namespace aprnet;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Resolves a setting: command-line flag, then config file, then default.
class Settings {
 public:
  explicit Settings(const Config& cfg) : cfg_(cfg) {}

  template <class V>
  V pick(const CLI::Option* opt, const V& cli_value, const std::string& key, const V& fallback) const {
    if (opt != nullptr && opt->count() > 0) return cli_value;
    if constexpr (std::is_same_v<V, std::string>) {
      return cfg_.get_string(key, fallback);
    } else if constexpr (std::is_same_v<V, double>) {
      return cfg_.get_double(key, fallback);
    } else if constexpr (std::is_same_v<V, std::uint64_t>) {
      return cfg_.get_u64(key, fallback);
    } else {
      return static_cast<V>(cfg_.get_size(key, fallback));
    }
  }

  const Config& config() const { return cfg_; }

 private:
  const Config& cfg_;
};

RenderConfig render_config(const Config& cfg, RenderConfig rc = {}) {
  rc.k = cfg.get_size("k", rc.k);
  rc.m = cfg.get_size("m", rc.m);
  rc.d_s = cfg.get_size("d_s", rc.d_s);
  rc.d_f = cfg.get_size("d_f", rc.d_f);
  rc.channel_plan = cfg.get_sizes("channel_plan", rc.channel_plan);
  rc.eps = cfg.get_double("eps", rc.eps);
  return rc;
}

TripletOptions triplet_options(const Config& cfg) {
  TripletOptions t;
  t.height = cfg.get_size("height", t.height);
  t.width = cfg.get_size("width", t.width);
  t.patch = cfg.get_size("patch", t.patch);
  t.binarize_window = cfg.get_size("binarize_window", t.binarize_window);
  t.binarize_offset = cfg.get_double("binarize_offset", t.binarize_offset);
  t.policy.swap_probability = cfg.get_double("swap_probability", t.policy.swap_probability);
  t.policy.rotate = cfg.get_size("rotate", 1) != 0;
  return t;
}

/// Generator restored from a checkpoint; a requested variant must agree with
/// the one recorded in the checkpoint.
Generator<float> load_generator(const std::string& weights, const std::string& variant) {
  std::optional<Variant> requested;
  if (!variant.empty()) requested = parse_variant(variant);
  const auto ck = read_checkpoint(weights);
  RenderConfig rc = render_config_from(ck);
  if (requested) {
    const Variant v = *requested;
    if (ck.meta.count("variant") != 0 && v != rc.variant) {
      throw IoError("checkpoint " + weights + " holds variant '" + variant_name(rc.variant) +
                    "', not '" + variant + "'");
    }
    rc.variant = v;
  }
  Generator<float> gen(rc);
  load_parameters(ck, gen.parameters());
  return gen;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style-guided text image rendering: data generation, training, rendering, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  int threads = 1;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--threads", threads, "worker threads for row-parallel kernels")
      ->check(CLI::PositiveNumber);

  // datagen
  auto* datagen = app.add_subcommand("datagen", "build (content, style, ground truth) triplets");
  std::string dg_src, dg_out;
  std::uint64_t dg_seed = 0;
  std::size_t dg_count = 0, dg_height = 0, dg_width = 0;
  auto* o_dg_src = datagen->add_option("--src", dg_src, "directory of PNG text lines or synthetic:N");
  datagen->add_option("--out", dg_out, "output directory")->required();
  auto* o_dg_seed = datagen->add_option("--seed", dg_seed, "random seed");
  auto* o_dg_count = datagen->add_option("--count", dg_count, "number of triplets");
  auto* o_dg_h = datagen->add_option("--height", dg_height, "triplet height (default 128)");
  auto* o_dg_w = datagen->add_option("--width", dg_width, "triplet width (default 384)");

  // train
  auto* train = app.add_subcommand("train", "train a renderer variant");
  std::string tr_data, tr_variant, tr_out, tr_curve;
  std::size_t tr_steps = 0, tr_batch = 0, tr_log = 10;
  std::uint64_t tr_seed = 0;
  double tr_lr = 0;
  train->add_option("--data", tr_data, "dataset directory")->required();
  auto* o_tr_variant = train->add_option("--variant", tr_variant, "renderer variant");
  auto* o_tr_steps = train->add_option("--steps", tr_steps, "optimizer steps");
  auto* o_tr_seed = train->add_option("--seed", tr_seed, "random seed");
  train->add_option("--out", tr_out, "checkpoint path")->required();
  auto* o_tr_batch = train->add_option("--batch", tr_batch, "batch size (default 2)");
  auto* o_tr_lr = train->add_option("--lr", tr_lr, "learning rate (default 2e-4)");
  train->add_option("--log-every", tr_log, "print a loss line every n steps (0 = never)");
  train->add_option("--curve", tr_curve, "write the full per-step loss curve to this file");

  // render
  auto* render = app.add_subcommand("render", "render text from a skeleton and a style image");
  std::string rd_content, rd_style, rd_variant, rd_weights, rd_out, rd_attention;
  render->add_option("--content", rd_content, "skeleton PNG (white strokes on black)")->required();
  render->add_option("--style", rd_style, "style PNG")->required();
  render->add_option("--variant", rd_variant, "renderer variant (must match the checkpoint)");
  render->add_option("--weights", rd_weights, "checkpoint")->required();
  render->add_option("--out", rd_out, "output PNG")->required();
  render->add_option("--attention", rd_attention,
                     "write the first fusion attention map as an RGBA PNG");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "mean PSNR / SSIM on a validation set");
  std::string mt_data;
  std::vector<std::string> mt_weights, mt_variants;
  metrics->add_option("--data", mt_data, "validation directory")->required();
  metrics->add_option("--weights", mt_weights, "checkpoint(s)")->required();
  metrics->add_option("--variant", mt_variants, "variant name(s), one per checkpoint");

  // gradcheck / selftest
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::size_t gc_probes = 0;
  gradcheck_cmd->add_option("--max-probes", gc_probes, "entries probed per tensor (0 = default)");
  auto* selftest_cmd = app.add_subcommand("selftest", "run the oracle and invariant suite");

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const Config cfg = config_path.empty() ? Config{} : Config::load(config_path);
    const Settings set(cfg);
    set_num_threads(threads);

    if (datagen->parsed()) {
      DatagenOptions opt;
      opt.triplet = triplet_options(cfg);
      opt.source = set.pick<std::string>(o_dg_src, dg_src, "src", "");
      if (opt.source.empty()) throw UsageError("datagen: --src is required");
      opt.out = dg_out;
      opt.seed = set.pick<std::uint64_t>(o_dg_seed, dg_seed, "seed", 0);
      std::size_t fallback_count = 8;
      if (opt.source.rfind("synthetic:", 0) == 0) {
        try {
          fallback_count = std::stoul(opt.source.substr(10));
        } catch (const std::exception&) {
          throw UsageError("datagen: malformed source '" + opt.source + "' (expected synthetic:N)");
        }
      } else if (opt.source == "synthetic") {
        fallback_count = 8;
      }
      opt.count = set.pick<std::size_t>(o_dg_count, dg_count, "count", fallback_count);
      opt.triplet.height = set.pick<std::size_t>(o_dg_h, dg_height, "height", opt.triplet.height);
      opt.triplet.width = set.pick<std::size_t>(o_dg_w, dg_width, "width", opt.triplet.width);
      generate_dataset(opt);
      std::cout << "wrote " << opt.count << " triplets to " << dg_out << "\n";
      return 0;
    }

    if (train->parsed()) {
      TrainConfig tc;
      tc.render = render_config(cfg);
      tc.render.variant = parse_variant(set.pick<std::string>(o_tr_variant, tr_variant, "variant", "aprnet"));
      tc.weights.content = cfg.get_double("lambda_c", tc.weights.content);
      tc.weights.perceptual = cfg.get_double("lambda_p", tc.weights.perceptual);
      tc.weights.adversarial = cfg.get_double("lambda_a", tc.weights.adversarial);
      tc.lr = set.pick<double>(o_tr_lr, tr_lr, "lr", tc.lr);
      tc.beta1 = cfg.get_double("beta1", tc.beta1);
      tc.beta2 = cfg.get_double("beta2", tc.beta2);
      tc.perceptual_seed = cfg.get_u64("perceptual_seed", tc.perceptual_seed);
      tc.perceptual_weights = cfg.get_string("perceptual_weights", "");
      tc.batch = set.pick<std::size_t>(o_tr_batch, tr_batch, "batch", tc.batch);
      tc.steps = set.pick<std::size_t>(o_tr_steps, tr_steps, "steps", tc.steps);
      tc.seed = set.pick<std::uint64_t>(o_tr_seed, tr_seed, "seed", tc.seed);
      const auto data = load_dataset(tr_data);
      Trainer trainer(tc);
      std::cout << "variant " << variant_name(tc.render.variant) << ", " << data.size()
                << " triplets, " << tc.steps << " steps\n";
      trainer.run(data, tc.steps, [&](const StepLog& l, Trainer&) {
        if (tr_log != 0 && (l.step % tr_log == 0 || l.step == tc.steps)) {
          std::printf("step %6zu  content %.5f  perceptual %.5f  adversarial %.5f  total %.5f  d %.5f\n",
                      l.step, l.content, l.perceptual, l.adversarial, l.total, l.d_loss);
          std::fflush(stdout);
        }
      });
      write_checkpoint(tr_out, trainer.checkpoint());
      if (!tr_curve.empty()) {
        std::ofstream os(tr_curve);
        if (!os) throw IoError("cannot write " + tr_curve);
        os << "step content perceptual adversarial total d_loss\n";
        for (const auto& l : trainer.curve()) {
          os << l.step << " " << l.content << " " << l.perceptual << " " << l.adversarial << " "
             << l.total << " " << l.d_loss << "\n";
        }
      }
      std::cout << "checkpoint written to " << tr_out << "\n";
      return 0;
    }

    if (render->parsed()) {
      auto gen = load_generator(rd_weights, rd_variant);
      const auto content = load_skeleton_png(rd_content);
      const auto style = load_png(rd_style);
      Tape<float> t;
      auto tr = gen.forward(t, t.constant(content), t.constant(style));
      save_png(rd_out, clamp(t.value(tr.output), 0.0f, 1.0f));
      if (!rd_attention.empty()) {
        if (tr.attention.empty()) {
          throw IoError("variant " + variant_name(gen.config().variant) + " has no fusion attention map");
        }
        save_png(rd_attention, tr.attention.front());
      }
      std::cout << "wrote " << rd_out << " (" << to_string(t.shape(tr.output)) << ")\n";
      return 0;
    }

    if (metrics->parsed()) {
      if (!mt_variants.empty() && mt_variants.size() != mt_weights.size()) {
        throw UsageError("metrics: give one --variant per --weights");
      }
      const auto data = load_dataset(mt_data);
      std::vector<EvalReport> reports;
      for (std::size_t i = 0; i < mt_weights.size(); ++i) {
        auto gen = load_generator(mt_weights[i], mt_variants.empty() ? "" : mt_variants[i]);
        reports.push_back(evaluate(data, [&](const Image& c, const Image& s) { return gen.render(c, s); },
                                   variant_name(gen.config().variant)));
      }
      std::cout << format_report(reports);
      return 0;
    }

    if (gradcheck_cmd->parsed()) {
      GradcheckOptions opt;
      opt.max_probes_per_tensor = gc_probes;
      const auto results = run_gradcheck_suite(opt);
      std::cout << format_gradcheck(results);
      for (const auto& r : results) {
        if (!r.pass) return 2;
      }
      return 0;
    }

    if (selftest_cmd->parsed()) {
      const int failures = aprnet_selftest::run(std::cout);
      return failures == 0 ? 0 : 2;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
