// SPDX-License-Identifier: Apache-2.0
#include "pvqc/conditioning.hpp"

#include "pvqc/error.hpp"

#include <string>

namespace pvqc::cond {
namespace nn = torch::nn;

namespace {

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
}

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

nn::ConvTranspose2d upconv(int64_t in, int64_t out) {
  return nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(in, out, 3).stride(2).padding(1).output_padding(1));
}

void zero_(nn::Conv2d& c) {
  torch::NoGradGuard no_grad;
  c->weight.zero_();
  c->bias.zero_();
}

torch::Tensor gelu(const torch::Tensor& t) { return torch::gelu(t); }

torch::Tensor to_channels_last(const torch::Tensor& t) { return t.permute({0, 2, 3, 1}); }

}  // namespace

torch::Tensor make_lambda_map(double lambda, int64_t height, int64_t width, int64_t batch) {
  check_lambda(lambda);
  if (height < 1 || width < 1 || batch < 1) throw ShapeError("make_lambda_map: empty map");
  return torch::full({batch, 1, height, width}, lambda);
}

wt::BlockConditioning SideContext::block(size_t stage) const {
  wt::BlockConditioning c;
  if (stage < prompts.size()) c.prompts = prompts[stage];
  if (stage < layer_shifts.size()) c.layer_shifts = layer_shifts[stage];
  return c;
}

torch::Tensor SideConditionerImpl::after_block(size_t, const torch::Tensor&,
                                               const torch::Tensor& block_output,
                                               const SideContext&) {
  return block_output;
}

PromptGeneratorImpl::PromptGeneratorImpl(Side side, int64_t source_channels,
                                         std::vector<StageShape> stages, int64_t width)
    : side_(side), stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("PromptGenerator: no stages");
  const int64_t in = source_channels + 1;
  pyramid = register_module("pyramid", nn::ModuleList());
  if (side_ == Side::Encoder) {
    // 1/4 of the input in one step, then one stride-2 conv per further stage.
    stem = register_module("stem", nn::Conv2d(nn::Conv2dOptions(in, width, 5).stride(4).padding(2)));
    for (size_t s = 1; s < stages_.size(); ++s) pyramid->push_back(conv(width, width, 3, 2));
  } else {
    stem = register_module("stem", conv(in, width, 3, 1));
    pyramid->push_back(conv(width, width, 3, 2));
    for (size_t s = 2; s < stages_.size(); ++s) pyramid->push_back(upconv(width, width));
  }
  projections = register_module("projections", nn::ModuleList());
  for (const auto& stage : stages_) {
    for (int64_t l = 0; l < stage.depth; ++l) {
      auto p = conv(width, stage.dim, 1, 1);
      zero_(p);
      projections->push_back(p);
    }
  }
}

std::vector<std::vector<torch::Tensor>> PromptGeneratorImpl::forward(
    const torch::Tensor& source_and_lambda) {
  auto base = torch::gelu(stem(source_and_lambda));
  std::vector<torch::Tensor> features;
  if (side_ == Side::Encoder) {
    features.push_back(base);
    for (size_t s = 1; s < stages_.size(); ++s) {
      features.push_back(torch::gelu(pyramid[s - 1]->as<nn::Conv2d>()->forward(features.back())));
    }
  } else {
    features.push_back(torch::gelu(pyramid[0]->as<nn::Conv2d>()->forward(base)));
    if (stages_.size() > 1) features.push_back(base);
    for (size_t s = 2; s < stages_.size(); ++s) {
      features.push_back(
          torch::gelu(pyramid[s - 1]->as<nn::ConvTranspose2d>()->forward(features.back())));
    }
  }
  std::vector<std::vector<torch::Tensor>> prompts(stages_.size());
  size_t k = 0;
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (int64_t l = 0; l < stages_[s].depth; ++l, ++k) {
      prompts[s].push_back(to_channels_last(projections[k]->as<nn::Conv2d>()->forward(features[s])));
    }
  }
  return prompts;
}

PromptConditionerImpl::PromptConditionerImpl(Side side, int64_t source_channels,
                                             std::vector<StageShape> stages, int64_t width) {
  generator = register_module("generator",
                              PromptGenerator(side, source_channels, std::move(stages), width));
}

std::vector<std::vector<torch::Tensor>> PromptConditionerImpl::generate(
    const torch::Tensor& source, const torch::Tensor& lambda_map) {
  if (source.dim() != 4 || lambda_map.dim() != 4 || lambda_map.size(1) != 1 ||
      lambda_map.size(0) != source.size(0) || lambda_map.size(2) != source.size(2) ||
      lambda_map.size(3) != source.size(3)) {
    throw ShapeError("prompt generator: lambda map must be [B, 1, H, W] matching the source");
  }
  return generator(torch::cat({source, lambda_map.to(source.dtype())}, 1));
}

SideContext PromptConditionerImpl::prepare(const torch::Tensor& source, double lambda) {
  SideContext ctx;
  ctx.lambda = lambda;
  ctx.prompts = generate(source, make_lambda_map(lambda, source.size(2), source.size(3), source.size(0)));
  return ctx;
}

torch::Tensor sft_modulate(const torch::Tensor& feature, const torch::Tensor& gamma,
                           const torch::Tensor& beta) {
  if (gamma.sizes() != feature.sizes() || beta.sizes() != feature.sizes()) {
    throw ShapeError("sft_modulate: gamma/beta must match the feature map shape");
  }
  return gamma * feature + beta;
}

SftConditionerImpl::SftConditionerImpl(std::vector<StageShape> stages, int64_t width) {
  condition_nets = register_module("condition_nets", nn::ModuleList());
  gamma_heads = register_module("gamma_heads", nn::ModuleList());
  beta_heads = register_module("beta_heads", nn::ModuleList());
  for (const auto& stage : stages) {
    nn::Sequential net(conv(stage.dim + 1, width, 3, 1), nn::Functional(gelu),
                       conv(width, width, 3, 1), nn::Functional(gelu));
    condition_nets->push_back(net);
    auto gamma = conv(width, stage.dim, 1, 1);
    auto beta = conv(width, stage.dim, 1, 1);
    zero_(gamma);
    zero_(beta);
    {
      torch::NoGradGuard no_grad;
      gamma->bias.fill_(1.0);
    }
    gamma_heads->push_back(gamma);
    beta_heads->push_back(beta);
  }
}

SideContext SftConditionerImpl::prepare(const torch::Tensor&, double lambda) {
  check_lambda(lambda);
  SideContext ctx;
  ctx.lambda = lambda;
  return ctx;
}

std::pair<torch::Tensor, torch::Tensor> SftConditionerImpl::affine(size_t stage,
                                                                    const torch::Tensor& block_input,
                                                                    double lambda) {
  if (stage >= condition_nets->size()) throw ShapeError("SFT: stage index out of range");
  auto map = make_lambda_map(lambda, block_input.size(2), block_input.size(3), block_input.size(0))
                 .to(block_input.dtype());
  auto h = condition_nets[stage]->as<nn::Sequential>()->forward(torch::cat({block_input, map}, 1));
  return {gamma_heads[stage]->as<nn::Conv2d>()->forward(h),
          beta_heads[stage]->as<nn::Conv2d>()->forward(h)};
}

torch::Tensor SftConditionerImpl::after_block(size_t stage, const torch::Tensor& block_input,
                                              const torch::Tensor& block_output,
                                              const SideContext& ctx) {
  auto [gamma, beta] = affine(stage, block_input, ctx.lambda);
  return sft_modulate(block_output, gamma, beta);
}

torch::Tensor beta_shift(const torch::Tensor& grid, const torch::Tensor& shift) {
  if (grid.dim() != 4 || shift.dim() != 2 || shift.size(0) != grid.size(0) ||
      shift.size(1) != grid.size(3)) {
    throw ShapeError("beta_shift: expected [B, H, W, C] grid and [B, C] shift");
  }
  return grid + shift.unsqueeze(1).unsqueeze(1);
}

BetaConditionerImpl::BetaConditionerImpl(std::vector<StageShape> stages, int64_t width)
    : stages_(std::move(stages)) {
  fc1 = register_module("fc1", nn::Linear(1, width));
  fc2 = register_module("fc2", nn::Linear(width, width));
  projections = register_module("projections", nn::ModuleList());
  for (const auto& stage : stages_) {
    for (int64_t l = 0; l < stage.depth; ++l) {
      nn::Linear p(width, stage.dim);
      torch::NoGradGuard no_grad;
      p->weight.zero_();
      p->bias.zero_();
      projections->push_back(p);
    }
  }
}

std::vector<std::vector<torch::Tensor>> BetaConditionerImpl::shifts(
    double lambda, int64_t batch, const torch::TensorOptions& options) {
  check_lambda(lambda);
  auto input = torch::full({batch, 1}, lambda, options);
  auto h = torch::gelu(fc2(torch::gelu(fc1(input.to(fc1->weight.dtype()))))).to(options.dtype());
  std::vector<std::vector<torch::Tensor>> out(stages_.size());
  size_t k = 0;
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (int64_t l = 0; l < stages_[s].depth; ++l, ++k) {
      out[s].push_back(projections[k]->as<nn::Linear>()->forward(h));
    }
  }
  return out;
}

SideContext BetaConditionerImpl::prepare(const torch::Tensor& source, double lambda) {
  SideContext ctx;
  ctx.lambda = lambda;
  ctx.layer_shifts = shifts(lambda, source.size(0), source.options());
  return ctx;
}

std::shared_ptr<SideConditionerImpl> make_conditioner(Mechanism mechanism, Side side,
                                                      int64_t source_channels,
                                                      std::vector<StageShape> stages,
                                                      int64_t width) {
  switch (mechanism) {
    case Mechanism::Prompt:
      return std::make_shared<PromptConditionerImpl>(side, source_channels, std::move(stages), width);
    case Mechanism::Sft:
      return std::make_shared<SftConditionerImpl>(std::move(stages), width);
    case Mechanism::Beta:
      return std::make_shared<BetaConditionerImpl>(std::move(stages), width);
  }
  throw ConfigError("unknown conditioning mechanism");
}

}  // namespace pvqc::cond
