// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"

#include "pvqc/error.hpp"
#include "pvqc/objectives.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

#include <cmath>
#include <filesystem>

using namespace pvqc;
using namespace pvqc::obj;

namespace {

// Single-window SSIM of two 11x11 single-channel images with explicit sums.
double ssim_11x11(const torch::Tensor& a, const torch::Tensor& b) {
  double g[11], gsum = 0.0;
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
    gsum += g[i];
  }
  auto pa = oracle::to_vector(a), pb = oracle::to_vector(b);
  double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
  for (int r = 0; r < 11; ++r) {
    for (int c = 0; c < 11; ++c) {
      const double w = g[r] * g[c] / (gsum * gsum);
      const double x = pa[static_cast<size_t>(r * 11 + c)], y = pb[static_cast<size_t>(r * 11 + c)];
      ma += w * x;
      mb += w * y;
      saa += w * x * x;
      sbb += w * y * y;
      sab += w * x * y;
    }
  }
  saa -= ma * ma;
  sbb -= mb * mb;
  sab -= ma * mb;
  const double c1 = 1e-4, c2 = 9e-4;
  return (2 * ma * mb + c1) * (2 * sab + c2) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2));
}

}  // namespace

TEST(Metrics, IdentityValues) {
  torch::manual_seed(1);
  auto x = torch::rand({2, 3, 64, 48});
  EXPECT_NEAR(ms_ssim(x, x).item<double>(), 1.0, 1e-6);
  EXPECT_EQ(psnr(x, x), kPsnrCapDb);
  EXPECT_EQ(perceptual_distance(x, x).item<double>(), 0.0);
  EXPECT_EQ(mse255(x, x).item<double>(), 0.0);
}

TEST(Metrics, KnownValues) {
  auto x = torch::zeros({1, 3, 4, 4});
  auto y = torch::full({1, 3, 4, 4}, 1.0 / 255.0);
  EXPECT_NEAR(mse255(x, y).item<double>(), 1.0, 1e-5);
  EXPECT_NEAR(psnr(x, y), 10.0 * std::log10(255.0 * 255.0), 1e-4);
  EXPECT_THROW(mse255(x, torch::zeros({1, 3, 4, 5})), ShapeError);
}

TEST(Metrics, DistortionScalesAreExact) {
  EXPECT_EQ(distortion_scale(Metric::Psnr), 0.01);
  EXPECT_EQ(distortion_scale(Metric::MsSsim), 25.0);
  EXPECT_EQ(distortion_scale(Metric::Perceptual), 2.5);
  torch::manual_seed(2);
  auto x = torch::rand({1, 3, 32, 32}, torch::kDouble);
  auto y = (x + 0.05 * torch::randn_like(x)).clamp(0, 1);
  EXPECT_EQ(scaled_distortion(Metric::Psnr, x, y).item<double>(), (0.01 * mse255(x, y)).item<double>());
  EXPECT_EQ(scaled_distortion(Metric::MsSsim, x, y).item<double>(),
            (25.0 * (1.0 - ms_ssim(x, y))).item<double>());
  EXPECT_EQ(scaled_distortion(Metric::Perceptual, x, y).item<double>(),
            (2.5 * perceptual_distance(x, y)).item<double>());
}

TEST(MsSsim, ScaleCount) {
  EXPECT_EQ(ms_ssim_scales(11), 1);
  EXPECT_EQ(ms_ssim_scales(21), 1);
  EXPECT_EQ(ms_ssim_scales(22), 2);
  EXPECT_EQ(ms_ssim_scales(175), 4);
  EXPECT_EQ(ms_ssim_scales(176), 5);
  EXPECT_EQ(ms_ssim_scales(4000), 5);
  EXPECT_THROW(ms_ssim_scales(10), ShapeError);
  EXPECT_THROW(ms_ssim(torch::rand({1, 1, 8, 8}), torch::rand({1, 1, 8, 8})), ShapeError);
}

TEST(MsSsim, SingleScaleMatchesExplicitSsim) {
  torch::manual_seed(3);
  auto a = torch::rand({1, 1, 11, 11}, torch::kDouble);
  auto b = (a + 0.2 * torch::randn_like(a)).clamp(0, 1);
  EXPECT_NEAR(ms_ssim(a, b).item<double>(), ssim_11x11(a[0][0], b[0][0]), 1e-9);
}

TEST(MsSsim, DecreasesWithNoise) {
  torch::manual_seed(4);
  auto x = torch::rand({1, 3, 64, 64});
  double previous = 1.0;
  for (double sigma : {0.01, 0.05, 0.2}) {
    auto y = (x + sigma * torch::randn_like(x)).clamp(0, 1);
    const double v = ms_ssim(x, y).item<double>();
    EXPECT_LT(v, previous);
    previous = v;
  }
}

TEST(Perceptual, PositiveSymmetricAndSaveLoad) {
  torch::manual_seed(5);
  auto x = torch::rand({2, 3, 32, 32});
  auto y = torch::rand({2, 3, 32, 32});
  auto d = default_perceptual()->forward(x, y);
  EXPECT_EQ(d.sizes(), (std::vector<int64_t>{2}));
  EXPECT_GT(d.min().item<double>(), 0.0);
  EXPECT_NEAR(perceptual_distance(x, y).item<double>(), perceptual_distance(y, x).item<double>(), 1e-6);

  const auto path = (std::filesystem::temp_directory_path() / "pvqc_perceptual_test.pvqm").string();
  default_perceptual()->save_weights(path);
  PerceptualProxy other(123);
  EXPECT_GT(std::abs(other->forward(x, y).sum().item<double>() - d.sum().item<double>()), 1e-6);
  other->load_weights(path);
  EXPECT_TRUE(torch::allclose(other->forward(x, y), d));
  std::filesystem::remove(path);
  EXPECT_THROW(perceptual_distance(x, y.narrow(2, 0, 16)), ShapeError);
}

TEST(MetricPair, ParseAndValidate) {
  auto p = MetricPair::parse("perceptual_psnr");
  EXPECT_EQ(p.a, Metric::Perceptual);
  EXPECT_EQ(p.b, Metric::Psnr);
  EXPECT_EQ(p.name(), "perceptual_psnr");
  EXPECT_EQ(MetricPair::parse("msssim_psnr").a, Metric::MsSsim);
  EXPECT_THROW(MetricPair::parse("psnr_psnr"), ConfigError);
  EXPECT_THROW(MetricPair::parse("lpips_psnr"), ConfigError);
  EXPECT_THROW(MetricPair::parse("psnr"), ConfigError);
  EXPECT_EQ(rate_weight(0), 5.556);
  EXPECT_EQ(rate_weight(3), 0.769);
  EXPECT_THROW(rate_weight(4), ConfigError);
}

TEST(RdLoss, AffineInLambda) {
  torch::manual_seed(6);
  auto x = torch::rand({1, 3, 32, 32}, torch::kDouble);
  auto y = (x + 0.1 * torch::randn_like(x)).clamp(0, 1);
  auto rate = torch::tensor(0.37, torch::kDouble);
  const auto pair = MetricPair::parse("perceptual_psnr");
  const double t0 = rd_loss(x, y, rate, 0.0, 2.857, pair).total.item<double>();
  const double t1 = rd_loss(x, y, rate, 1.0, 2.857, pair).total.item<double>();
  for (int i = 0; i <= 10; ++i) {
    const double lambda = i / 10.0;
    const double t = rd_loss(x, y, rate, lambda, 2.857, pair).total.item<double>();
    EXPECT_NEAR(t, lambda * t1 + (1 - lambda) * t0, 1e-9);
  }
  auto parts = rd_loss(x, y, rate, 0.3, 2.857, pair);
  EXPECT_NEAR(parts.total.item<double>(),
              2.857 * 0.37 + 0.3 * parts.d_a.item<double>() + 0.7 * parts.d_b.item<double>(), 1e-12);
  EXPECT_THROW(rd_loss(x, y, rate, 1.5, 1.0, pair), ConfigError);
}

TEST(RdLoss, GradientsMatchFiniteDifferences) {
  torch::manual_seed(7);
  auto x = torch::rand({1, 3, 8, 8}, torch::kDouble);
  auto rate = torch::tensor(0.2, torch::kDouble);
  for (const char* name : {"perceptual_psnr", "psnr_perceptual"}) {
    const auto pair = MetricPair::parse(name);
    auto f = [&](const torch::Tensor& y) { return rd_loss(x, y, rate, 0.4, 1.0, pair).total; };
    auto y0 = (x + 0.1 * torch::randn_like(x)).clamp(0.05, 0.95);
    EXPECT_LT(oracle::gradient_relative_error(f, y0), 1e-3) << name;
  }
  // MS-SSIM needs at least one 11x11 window.
  auto x11 = torch::rand({1, 3, 11, 11}, torch::kDouble);
  const auto pair = MetricPair::parse("msssim_psnr");
  auto g = [&](const torch::Tensor& y) { return rd_loss(x11, y, rate, 0.6, 1.0, pair).total; };
  auto y11 = (x11 + 0.1 * torch::randn_like(x11)).clamp(0.05, 0.95);
  EXPECT_LT(oracle::gradient_relative_error(g, y11), 1e-3);
}
