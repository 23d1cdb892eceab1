// SPDX-License-Identifier: Apache-2.0
#include "pvqc/error.hpp"
#include "pvqc/training.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace pvqc;
using namespace pvqc::train;
namespace fs = std::filesystem;

namespace {

// Reduced-width model and tiny corpus so a step takes a few milliseconds.
TrainConfig small(Stage stage = Stage::Pretrain, Variant variant = Variant::None) {
  TrainConfig c;
  c.stage = stage;
  c.codec.latent_channels = 16;
  c.codec.hyper_channels = 8;
  c.codec.dims = {8, 8, 8, 8};
  c.codec.heads = {1, 1, 1, 1};
  c.codec.hyper_dim = 8;
  c.codec.hyper_heads = 1;
  c.codec.cond_width = 8;
  c.codec.variant = variant;
  c.batch_size = 2;
  c.patch_size = 64;
  c.image_size = 64;
  c.corpus_size = 4;
  c.steps = 6;
  c.learning_rate = 1e-3;
  return c;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "pvqc_training_test";
  fs::create_directories(dir);
  auto p = dir / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST(TrainConfig, TextRoundTrip) {
  auto c = small(Stage::Joint, Variant::DecoderSide);
  c.codec.mechanism = Mechanism::Beta;
  c.pair = obj::MetricPair::parse("msssim_psnr");
  c.rate_index = 2;
  c.seed = 99;
  c.log_path = "/tmp/x.csv";
  auto back = TrainConfig::parse(c.to_text());
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.codec, c.codec);
}

TEST(TrainConfig, ParsesCommentsPresetsAndOverrides) {
  const std::string text =
      "# joint stage\n"
      "stage = joint   # trailing comment\n"
      "preset = toy\n"
      "variant = both\n"
      "mechanism = sft\n"
      "codec.window = 8\n"
      "pair = perceptual_psnr\n"
      "\n"
      "steps = 12\n";
  auto c = TrainConfig::parse(text);
  EXPECT_EQ(c.stage, Stage::Joint);
  EXPECT_EQ(c.codec.variant, Variant::BothSide);
  EXPECT_EQ(c.codec.mechanism, Mechanism::Sft);
  EXPECT_EQ(c.codec.window, 8);
  EXPECT_EQ(c.steps, 12);
}

TEST(TrainConfig, RejectsInvalidSettings) {
  EXPECT_THROW(TrainConfig::parse("stage = joint\n"), ConfigError);  // needs a variant
  EXPECT_THROW(TrainConfig::parse("variant = both\n"), ConfigError);  // pretrain is unconditioned
  EXPECT_THROW(TrainConfig::parse("colour = blue\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("steps = many\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("steps 12\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("rate_index = 4\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("patch_size = 128\nimage_size = 96\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("preset = huge\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("codec.window = 6\n"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("stage = warmup\n"), ConfigError);
  EXPECT_THROW(TrainConfig::load("/nonexistent/pvqc.cfg"), DataError);
}

TEST(Lambda, UniformDraws) {
  std::mt19937_64 rng(123);
  constexpr int n = 100000, bins = 10;
  std::array<int, bins> counts{};
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(rng);
    ASSERT_GE(l, 0.0);
    ASSERT_LT(l, 1.0);
    sum += l;
    sq += l * l;
    ++counts[static_cast<size_t>(l * bins)];
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.002);
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / bins) * (c - n / bins) / static_cast<double>(n / bins);
  EXPECT_LT(chi2, 21.666);  // 99th percentile of chi-square with 9 degrees of freedom
}

TEST(Schedule, CosineDecay) {
  TrainConfig c;
  c.steps = 100;
  c.learning_rate = 1e-3;
  c.lr_final = 1e-5;
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 0), 1e-3);
  EXPECT_NEAR(learning_rate_at(c, 50), (1e-3 + 1e-5) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 100), 1e-5);
  EXPECT_DOUBLE_EQ(learning_rate_at(c, 500), 1e-5);
  EXPECT_GT(learning_rate_at(c, 10), learning_rate_at(c, 11));
}

TEST(Data, ProceduralImagesAreDeterministicAndDisjoint) {
  auto a = procedural_image(5, 48);
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{3, 48, 48}));
  EXPECT_TRUE(torch::equal(a, procedural_image(5, 48)));
  EXPECT_FALSE(torch::equal(a, procedural_image(6, 48)));
  EXPECT_GE(a.min().item<double>(), 0.0);
  EXPECT_LE(a.max().item<double>(), 1.0);
  EXPECT_GT(a.std().item<double>(), 0.02);

  ToyCorpus corpus(1, 8, 48);
  auto held = heldout_patches(1, 8, 48);
  for (int64_t i = 0; i < 8; ++i) {
    for (int64_t j = 0; j < 8; ++j) EXPECT_FALSE(torch::equal(corpus.image(i), held[j]));
  }
  std::mt19937_64 r1(3), r2(3);
  auto s1 = corpus.sample(r1, 4, 32);
  EXPECT_EQ(s1.sizes(), (std::vector<int64_t>{4, 3, 32, 32}));
  EXPECT_TRUE(torch::equal(s1, corpus.sample(r2, 4, 32)));
  EXPECT_THROW(corpus.sample(r1, 1, 64), DataError);
  EXPECT_THROW(corpus.add(torch::zeros({1, 64, 64})), ShapeError);
}

TEST(Adam, MatchesReferenceOptimizer) {
  torch::manual_seed(4);
  auto w1 = torch::randn({5, 3}, torch::kDouble).requires_grad_(true);
  auto w2 = w1.detach().clone().requires_grad_(true);
  Adam ours({{"w", w1}});
  torch::optim::Adam ref({w2}, torch::optim::AdamOptions(0.01));
  auto target = torch::randn({5, 3}, torch::kDouble);
  for (int i = 0; i < 20; ++i) {
    ours.zero_grad();
    ((w1 - target).pow(3).abs()).sum().backward();
    ours.step(0.01);
    ref.zero_grad();
    ((w2 - target).pow(3).abs()).sum().backward();
    ref.step();
  }
  EXPECT_TRUE(torch::allclose(w1, w2, 1e-10, 1e-12));
  EXPECT_EQ(ours.steps_taken(), 20);
}

TEST(Adam, StateRoundTrip) {
  auto p = torch::randn({4}).requires_grad_(true);
  Adam a({{"p", p}});
  p.sum().backward();
  a.step(0.1);
  TensorArchive archive;
  a.save_to(archive);
  auto q = p.detach().clone().requires_grad_(true);
  Adam b({{"p", q}});
  b.load_from(archive);
  EXPECT_EQ(b.steps_taken(), 1);
  p.mutable_grad() = torch::ones({4});
  q.mutable_grad() = torch::ones({4});
  a.step(0.1);
  b.step(0.1);
  EXPECT_TRUE(torch::equal(p, q));
  EXPECT_THROW(Adam({{"p", q}}).load_from(TensorArchive{}), ModelMismatchError);
}

TEST(ClipGradNorm, ScalesToMaximum) {
  auto a = torch::zeros({2}).requires_grad_(true);
  auto b = torch::zeros({1}).requires_grad_(true);
  a.mutable_grad() = torch::tensor({3.0f, 0.0f});
  b.mutable_grad() = torch::tensor({4.0f});
  EXPECT_NEAR(clip_grad_norm({a, b}, 1.0), 5.0, 1e-6);
  const double after = std::sqrt(a.grad().pow(2).sum().item<double>() + b.grad().pow(2).sum().item<double>());
  EXPECT_NEAR(after, 1.0, 1e-5);
  EXPECT_NEAR(clip_grad_norm({a, b}, 0.0), after, 1e-6);  // 0 disables clipping
}

TEST(StageLoss, ObjectivesPerStage) {
  torch::manual_seed(5);
  auto x = torch::rand({1, 3, 32, 32});
  TrainOutput out;
  out.x_hat = (x + 0.05 * torch::randn_like(x)).clamp(0, 1);
  out.rate_bpp = torch::tensor(0.5);
  auto mse = 0.01 * obj::mse255(x, out.x_hat).item<double>();
  auto perc = 2.5 * obj::perceptual_distance(x, out.x_hat).item<double>();

  TrainConfig c;
  c.rate_index = 1;
  EXPECT_NEAR(stage_loss(c, x, out, 1.0).total.item<double>(), 2.857 * 0.5 + mse, 1e-4);
  c.stage = Stage::SingleMetric;
  c.metric = obj::Metric::Perceptual;
  c.w_mse = 0.5;
  EXPECT_NEAR(stage_loss(c, x, out, 1.0).total.item<double>(), 2.857 * 0.5 + perc + 0.5 * mse, 1e-4);
  c.stage = Stage::Joint;
  c.pair = obj::MetricPair::parse("perceptual_psnr");
  EXPECT_NEAR(stage_loss(c, x, out, 0.25).total.item<double>(),
              2.857 * 0.5 + 0.25 * perc + 0.75 * mse, 1e-4);
}

TEST(Trainer, LossDecreasesOnShortRun) {
  auto c = small();
  c.steps = 40;
  c.corpus_size = 2;
  Trainer t(c);
  auto logs = t.run();
  ASSERT_EQ(logs.size(), 40u);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += logs[static_cast<size_t>(i)].loss;
    last += logs[logs.size() - 1 - static_cast<size_t>(i)].loss;
  }
  EXPECT_LT(last, first);
}

TEST(Trainer, ResumeReproducesTheUninterruptedRun) {
  const auto ck = scratch("resume.pvqm");
  auto c = small();
  Trainer full(c);
  auto reference = full.run();

  Trainer first(c);
  first.run(3);
  first.save_checkpoint(ck.string());
  auto resumed = Trainer::resume(ck.string());
  EXPECT_EQ(resumed.current_step(), 3);
  auto tail = resumed.run();
  ASSERT_EQ(tail.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(tail[i].loss, reference[3 + i].loss) << "step " << 3 + i;
    EXPECT_EQ(tail[i].lambda, reference[3 + i].lambda);
  }
  auto a = full.codec()->parameters(), b = resumed.codec()->parameters();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
}

TEST(Trainer, JointStageTrainsConditionersOnTopOfBase) {
  const auto base = scratch("base.pvqm");
  Trainer pre(small());
  pre.run(2);
  pre.save_checkpoint(base.string());

  auto c = small(Stage::Joint, Variant::BothSide);
  c.base_checkpoint = base.string();
  Trainer joint(c);
  // Shared weights come from the base model.
  auto archive = TensorArchive::read(base.string());
  EXPECT_TRUE(torch::equal(joint.codec()->analysis->head->weight, archive.tensor("analysis.head.weight")));
  EXPECT_GT(joint.load_base(archive), 0u);  // conditioners are not in the base

  auto log = joint.step();
  EXPECT_GE(log.lambda, 0.0);
  EXPECT_LT(log.lambda, 1.0);
  const auto& norms = joint.last_grad_norms();
  for (const char* name : {"analysis", "synthesis", "hyper_analysis", "hyper_synthesis", "prior",
                           "enc_cond", "dec_cond"}) {
    ASSERT_TRUE(norms.count(name)) << name;
    EXPECT_GT(norms.at(name), 0.0) << name;
  }
  EXPECT_EQ(checkpoint_metric_tag(c), "perceptual_psnr");
  EXPECT_EQ(joint.checkpoint().meta("train.metric").value(), "perceptual_psnr");
}

TEST(Trainer, AbortsOnNonFiniteLoss) {
  Trainer t(small());
  {
    torch::NoGradGuard guard;
    auto last = t.codec()->synthesis->ups[3]->as<torch::nn::ConvTranspose2d>();
    last->bias.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  try {
    t.step();
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at step 0"), std::string::npos) << e.what();
  }
}

TEST(Trainer, AppendsCsvLogAndCheckpoints) {
  const auto log = scratch("train.csv");
  const auto ck = scratch("periodic.pvqm");
  auto c = small();
  c.steps = 4;
  c.log_path = log.string();
  c.checkpoint_path = ck.string();
  c.checkpoint_every = 2;
  Trainer t(c);
  t.run();
  std::ifstream in(log);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss,rate,d_a,d_b,lambda");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
  auto archive = TensorArchive::read(ck.string());
  EXPECT_EQ(archive.meta("train.step").value(), "4");
  EXPECT_EQ(archive.meta("train.stage").value(), "pretrain");
  EXPECT_THROW(Trainer::resume(log.string()), FormatError);
}
