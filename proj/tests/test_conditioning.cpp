// SPDX-License-Identifier: Apache-2.0
#include "pvqc/conditioning.hpp"
#include "pvqc/error.hpp"

#include <gtest/gtest.h>
#include <torch/torch.h>

using namespace pvqc;
using namespace pvqc::cond;

namespace {

const std::vector<StageShape> kEncoderStages{{8, 2}, {12, 2}, {12, 1}, {16, 2}};
const std::vector<StageShape> kDecoderStages{{16, 2}, {12, 1}, {12, 2}, {8, 2}};

void randomize(torch::nn::Module& m, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), gen, p.options()) * 0.3);
}

std::vector<int64_t> hw(const torch::Tensor& nhwc) { return {nhwc.size(1), nhwc.size(2)}; }

}  // namespace

TEST(LambdaMap, UniformPlane) {
  auto m = make_lambda_map(0.25, 5, 7, 2);
  EXPECT_EQ(m.sizes(), (std::vector<int64_t>{2, 1, 5, 7}));
  EXPECT_EQ(m.min().item<double>(), 0.25);
  EXPECT_EQ(m.max().item<double>(), 0.25);
  EXPECT_THROW(make_lambda_map(1.5, 2, 2), ConfigError);
  EXPECT_THROW(make_lambda_map(-0.01, 2, 2), ConfigError);
  EXPECT_THROW(make_lambda_map(0.5, 0, 2), ShapeError);
}

TEST(PromptGenerator, EncoderPyramidIsHalfOfEachStage) {
  // Analysis stages of a 48x48 input run at 24, 12, 6, 3 tokens.
  PromptConditionerImpl gen(Side::Encoder, 3, kEncoderStages, 16);
  auto ctx = gen.prepare(torch::rand({1, 3, 48, 48}), 0.5);
  ASSERT_EQ(ctx.prompts.size(), 4u);
  const std::vector<std::vector<int64_t>> expected{{12, 12}, {6, 6}, {3, 3}, {2, 2}};
  for (size_t s = 0; s < 4; ++s) {
    ASSERT_EQ(ctx.prompts[s].size(), static_cast<size_t>(kEncoderStages[s].depth));
    for (const auto& p : ctx.prompts[s]) {
      EXPECT_EQ(hw(p), expected[s]) << "stage " << s;
      EXPECT_EQ(p.size(3), kEncoderStages[s].dim);
    }
  }
}

TEST(PromptGenerator, DecoderPyramidFollowsSynthesisStages) {
  // Synthesis stages of a 3x3 latent run at 3, 6, 12, 24 tokens.
  PromptConditionerImpl gen(Side::Decoder, 6, kDecoderStages, 16);
  auto ctx = gen.prepare(torch::randn({2, 6, 3, 3}), 0.0);
  const std::vector<std::vector<int64_t>> expected{{2, 2}, {3, 3}, {6, 6}, {12, 12}};
  for (size_t s = 0; s < 4; ++s) {
    for (const auto& p : ctx.prompts[s]) {
      EXPECT_EQ(hw(p), expected[s]) << "stage " << s;
      EXPECT_EQ(p.size(0), 2);
      EXPECT_EQ(p.size(3), kDecoderStages[s].dim);
    }
  }
}

TEST(PromptGenerator, StartsAtZeroAndDependsOnLambdaOnceTrained) {
  PromptConditionerImpl gen(Side::Encoder, 3, kEncoderStages, 16);
  auto x = torch::rand({1, 3, 32, 32});
  for (const auto& stage : gen.prepare(x, 1.0).prompts) {
    for (const auto& p : stage) EXPECT_EQ(p.abs().max().item<double>(), 0.0);
  }
  randomize(gen, 3);
  auto a = gen.prepare(x, 0.0).prompts;
  auto b = gen.prepare(x, 1.0).prompts;
  EXPECT_GT((a[0][0] - b[0][0]).abs().max().item<double>(), 1e-4);
  EXPECT_THROW(gen.generate(x, torch::zeros({1, 1, 16, 32})), ShapeError);
  EXPECT_THROW(gen.prepare(x, 2.0), ConfigError);
}

TEST(Sft, ModulateArithmetic) {
  auto f = torch::tensor({1.0, 2.0, 3.0}).reshape({1, 3, 1, 1});
  auto g = torch::tensor({2.0, 0.5, -1.0}).reshape({1, 3, 1, 1});
  auto b = torch::tensor({0.0, 1.0, 1.0}).reshape({1, 3, 1, 1});
  auto out = sft_modulate(f, g, b);
  EXPECT_TRUE(torch::equal(out.flatten(), torch::tensor({2.0, 2.0, -2.0})));
  EXPECT_THROW(sft_modulate(f, g.flatten(), b), ShapeError);
}

TEST(Sft, IdentityAtInitialisationForEveryLambda) {
  SftConditionerImpl sft(kEncoderStages, 16);
  auto in = torch::randn({2, 12, 6, 6});
  auto out = torch::randn({2, 12, 6, 6});
  for (double lambda : {0.0, 0.5, 1.0}) {
    auto ctx = sft.prepare(in, lambda);
    EXPECT_TRUE(torch::allclose(sft.after_block(1, in, out, ctx), out));
  }
  randomize(sft, 4);
  auto [g0, b0] = sft.affine(1, in, 0.0);
  auto [g1, b1] = sft.affine(1, in, 1.0);
  EXPECT_EQ(g0.sizes(), out.sizes());
  EXPECT_GT((g0 - g1).abs().max().item<double>(), 1e-4);
  EXPECT_THROW(sft.affine(7, in, 0.0), ShapeError);
}

TEST(Beta, ShiftArithmeticAndShapes) {
  auto grid = torch::zeros({2, 3, 3, 4});
  auto shift = torch::arange(8, torch::kFloat).reshape({2, 4});
  auto out = beta_shift(grid, shift);
  EXPECT_EQ(out[1][2][0][3].item<float>(), 7.0f);
  EXPECT_THROW(beta_shift(grid, torch::zeros({2, 5})), ShapeError);

  BetaConditionerImpl beta(kEncoderStages, 16);
  auto ctx = beta.prepare(torch::zeros({3, 3, 8, 8}), 0.3);
  ASSERT_EQ(ctx.layer_shifts.size(), 4u);
  for (size_t s = 0; s < 4; ++s) {
    ASSERT_EQ(ctx.layer_shifts[s].size(), static_cast<size_t>(kEncoderStages[s].depth));
    for (const auto& v : ctx.layer_shifts[s]) {
      EXPECT_EQ(v.sizes(), (std::vector<int64_t>{3, kEncoderStages[s].dim}));
      EXPECT_EQ(v.abs().max().item<double>(), 0.0);
    }
  }
  randomize(beta, 5);
  auto a = beta.shifts(0.0, 1, torch::kFloat)[2][0];
  auto b = beta.shifts(1.0, 1, torch::kFloat)[2][0];
  EXPECT_GT((a - b).abs().max().item<double>(), 1e-4);
  EXPECT_THROW(beta.shifts(-1.0, 1, torch::kFloat), ConfigError);
}

TEST(Conditioner, FactoryHonoursMechanism) {
  for (auto m : {Mechanism::Prompt, Mechanism::Sft, Mechanism::Beta}) {
    auto c = make_conditioner(m, Side::Decoder, 6, kDecoderStages, 8);
    EXPECT_EQ(c->mechanism(), m);
  }
  EXPECT_THROW(PromptGeneratorImpl(Side::Encoder, 3, {}, 8), ConfigError);
}
