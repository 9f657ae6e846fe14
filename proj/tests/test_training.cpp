#include "test_util.hpp"

using namespace aprnet;
using testutil::random_tensor;

namespace {

std::vector<TrainingTriplet> toy_set(std::size_t n, std::uint64_t seed) {
  TripletOptions opt;
  opt.height = 32;
  opt.width = 96;
  std::vector<TrainingTriplet> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng r(seed + i);
    out.push_back(make_triplet(synthetic_text_line(r, 32, 120), r, opt));
  }
  return out;
}

TrainConfig toy_config(Variant v, std::size_t batch = 1) {
  TrainConfig cfg;
  cfg.render.variant = v;
  cfg.batch = batch;
  return cfg;
}

}  // namespace

TEST(Losses, ContentIsMeanAbsoluteError) {
  Tape<double> t;
  Var a = t.constant(Tensor<double>(Shape{1, 2, 1}, std::vector<double>{0.2, 0.9}));
  Var b = t.constant(Tensor<double>(Shape{1, 2, 1}, std::vector<double>{0.5, 0.4}));
  EXPECT_NEAR(t.value(content_loss(t, a, b))[0], 0.4, 1e-15);
}

TEST(Losses, PerceptualIsZeroOnIdenticalImagesAndPositiveOtherwise) {
  const auto net = PerceptualNet<double>::seeded(7);
  std::mt19937_64 rng(1);
  const auto x = random_tensor({16, 32, 3}, rng, 0, 1);
  const auto y = random_tensor({16, 32, 3}, rng, 0, 1);
  Tape<double> t;
  EXPECT_EQ(t.value(perceptual_loss(t, t.constant(x), t.constant(x), net))[0], 0.0);
  EXPECT_GT(t.value(perceptual_loss(t, t.constant(x), t.constant(y), net))[0], 0.0);
  const auto feats = net.features(t, t.constant(x));
  ASSERT_EQ(feats.size(), 5u);
  EXPECT_EQ(t.shape(feats[0]), (Shape{16, 32, 16}));
  EXPECT_EQ(t.shape(feats[4]), (Shape{1, 2, 64}));
}

TEST(Losses, PerceptualWeightsRoundTripThroughCheckpoint) {
  const auto net = PerceptualNet<float>::seeded(11);
  const auto path = std::filesystem::temp_directory_path() / "aprnet_test_perceptual.ckpt";
  write_checkpoint(path, net.to_checkpoint());
  const auto loaded = PerceptualNet<float>::from_checkpoint(read_checkpoint(path));
  ASSERT_EQ(loaded.num_stages(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(loaded.stages()[i].weight, net.stages()[i].weight);
    EXPECT_EQ(loaded.stages()[i].stride, net.stages()[i].stride);
  }
  auto cfg = TrainConfig{};
  cfg.perceptual_weights = path.string();
  EXPECT_NO_THROW(Trainer{cfg});
  Checkpoint partial = net.to_checkpoint();
  partial.tensors.pop_back();
  EXPECT_THROW(PerceptualNet<float>::from_checkpoint(partial), IoError);
  std::filesystem::remove(path);
}

TEST(Losses, AdversarialMatchesBceOracle) {
  Rng drng(2);
  Discriminator<double> d(drng);
  std::mt19937_64 rng(3);
  const auto real = random_tensor({32, 96, 3}, rng, 0, 1);
  const auto fake = random_tensor({32, 96, 3}, rng, 0, 1);
  Tape<double> t;
  const auto a = adversarial_losses(t, d, t.constant(fake), t.constant(real));
  const auto zr = t.value(d.forward(t, t.constant(real)));
  const auto zf = t.value(d.forward(t, t.constant(fake)));
  EXPECT_EQ(zr.shape(), (Shape{4, 12, 1}));
  EXPECT_NEAR(t.value(a.g_loss)[0], oracle::bce_with_logits(zf, 1), 1e-12);
  EXPECT_NEAR(t.value(a.d_real)[0], oracle::bce_with_logits(zr, 1), 1e-12);
  EXPECT_NEAR(t.value(a.d_fake)[0], oracle::bce_with_logits(zf, 0), 1e-12);
  EXPECT_NEAR(t.value(a.d_loss)[0],
              0.5 * (oracle::bce_with_logits(zr, 1) + oracle::bce_with_logits(zf, 0)), 1e-12);
}

TEST(LossWeights, Validation) {
  EXPECT_NO_THROW((LossWeights{10, 1, 1}.validate()));
  EXPECT_THROW((LossWeights{-1, 1, 1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0, 0, 0}.validate()), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<float> p("p", Tensor<float>(Shape{1, 1, 2}, std::vector<float>{1.0f, -1.0f}));
  p.zero_grad();
  p.grad[0] = 0.3f;
  p.grad[1] = -5.0f;
  Adam<float> opt(0.01, 0.5, 0.999);
  ParamList<float> ps{&p};
  opt.step(ps);
  EXPECT_NEAR(p.value[0], 0.99f, 1e-6f);
  EXPECT_NEAR(p.value[1], -0.99f, 1e-6f);
}

TEST(Trainer, ZeroStepsCheckpointEqualsInit) {
  const auto cfg = toy_config(Variant::aprnet);
  Trainer a(cfg);
  Generator<float> fresh(a.generator().config());
  const auto ck = a.checkpoint();
  const auto init = make_checkpoint(fresh.parameters());
  ASSERT_EQ(ck.tensors.size(), init.tensors.size());
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    EXPECT_EQ(ck.tensors[i].name, init.tensors[i].name);
    EXPECT_EQ(ck.tensors[i].values, init.tensors[i].values);
  }
  EXPECT_EQ(ck.meta.at("steps"), "0");
}

TEST(Trainer, SameSeedSameCurveAndWeights) {
  const auto data = toy_set(3, 50);
  auto run = [&] {
    Trainer t(toy_config(Variant::pixymod, 2));
    t.run(data, 3);
    return std::make_pair(t.curve(), t.checkpoint());
  };
  const auto [ca, ka] = run();
  const auto [cb, kb] = run();
  ASSERT_EQ(ca.size(), 3u);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    EXPECT_EQ(ca[i].total, cb[i].total);
    EXPECT_EQ(ca[i].d_loss, cb[i].d_loss);
  }
  for (std::size_t i = 0; i < ka.tensors.size(); ++i) EXPECT_EQ(ka.tensors[i].values, kb.tensors[i].values);
}

TEST(Trainer, DiscriminatorIsFrozenWithoutAdversarialWeight) {
  const auto data = toy_set(1, 60);
  auto cfg = toy_config(Variant::baseline);
  cfg.weights = {10, 1, 0};
  Trainer t(cfg);
  const auto before = make_checkpoint(t.discriminator().parameters());
  const auto log = t.step(data);
  EXPECT_EQ(log.adversarial, 0.0);
  EXPECT_EQ(log.d_loss, 0.0);
  const auto after = make_checkpoint(t.discriminator().parameters());
  for (std::size_t i = 0; i < before.tensors.size(); ++i)
    EXPECT_EQ(before.tensors[i].values, after.tensors[i].values);
}

TEST(Trainer, DivergenceAborts) {
  const auto data = toy_set(1, 70);
  auto cfg = toy_config(Variant::baseline);
  Trainer t(cfg);
  for (auto* p : t.generator().parameters())
    for (auto& v : p->value.storage()) v = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(t.step(data), TrainingError);
  std::vector<TrainingTriplet> empty;
  EXPECT_THROW(t.step(empty), TrainingError);
}

TEST(Trainer, SingleTripletContentLossDrops) {
  const auto data = toy_set(1, 80);
  auto cfg = toy_config(Variant::aprnet);
  cfg.weights = {10, 1, 0};
  Trainer t(cfg);
  double at10 = 0;
  t.run(data, 300, [&](const StepLog& log, Trainer& tr) {
    if (log.step == 10) at10 = tr.mean_content_loss(data);
  });
  const double final_loss = t.mean_content_loss(data);
  EXPECT_LE(final_loss, 0.2 * at10) << "step 10 " << at10 << " final " << final_loss;
}
