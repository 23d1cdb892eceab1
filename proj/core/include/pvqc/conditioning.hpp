// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/swin_block.hpp"
#include "pvqc/variant.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <vector>

namespace pvqc::cond {

/// Uniform [batch, 1, height, width] plane filled with lambda in [0, 1].
torch::Tensor make_lambda_map(double lambda, int64_t height, int64_t width, int64_t batch = 1);

/// Channel width and layer count of one STB stage being conditioned.
struct StageShape {
  int64_t dim = 0;
  int64_t depth = 0;
};

enum class Side { Encoder, Decoder };

/// Everything a transform needs from a conditioner for one forward pass.
struct SideContext {
  double lambda = 0.0;
  std::vector<std::vector<torch::Tensor>> prompts;       ///< [stage][layer] NHWC grids
  std::vector<std::vector<torch::Tensor>> layer_shifts;  ///< [stage][layer] [B, C]

  wt::BlockConditioning block(size_t stage) const;
};

/// Common interface of the three conditioning mechanisms.  A transform calls
/// prepare() once per forward pass and after_block() after every STB.
class SideConditionerImpl : public torch::nn::Module {
public:
  ~SideConditionerImpl() override = default;

  virtual Mechanism mechanism() const = 0;
  /// source: the transform's input (image x or latent y_hat), NCHW.
  virtual SideContext prepare(const torch::Tensor& source, double lambda) = 0;
  /// Feature maps are NCHW.  Default: identity.
  virtual torch::Tensor after_block(size_t stage, const torch::Tensor& block_input,
                                    const torch::Tensor& block_output, const SideContext& ctx);
};

/// Prompt generation network.  Encoder flavour: strided convolutions over
/// [x, m_lambda], emitting features at 1/4, 1/8, ... of the input, i.e. half
/// the resolution of each analysis stage.  Decoder flavour: the stem runs at
/// the latent resolution; one strided convolution serves the first synthesis
/// stage and transposed convolutions serve the upsampled ones.  A 1x1
/// projection per transformer layer turns each stage's features into that
/// layer's prompt grid; projections start at zero.
class PromptGeneratorImpl : public torch::nn::Module {
public:
  PromptGeneratorImpl(Side side, int64_t source_channels, std::vector<StageShape> stages,
                      int64_t width);

  /// source_and_lambda: [B, source_channels + 1, H, W].
  std::vector<std::vector<torch::Tensor>> forward(const torch::Tensor& source_and_lambda);

  Side side() const { return side_; }

private:
  Side side_;
  std::vector<StageShape> stages_;
  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList pyramid{nullptr};
  torch::nn::ModuleList projections{nullptr};
};
TORCH_MODULE(PromptGenerator);

class PromptConditionerImpl : public SideConditionerImpl {
public:
  PromptConditionerImpl(Side side, int64_t source_channels, std::vector<StageShape> stages,
                        int64_t width);

  Mechanism mechanism() const override { return Mechanism::Prompt; }
  SideContext prepare(const torch::Tensor& source, double lambda) override;

  /// Prompts for an explicit lambda map; the map must match source's
  /// spatial size.
  std::vector<std::vector<torch::Tensor>> generate(const torch::Tensor& source,
                                                   const torch::Tensor& lambda_map);

  PromptGenerator generator{nullptr};
};

/// out = gamma * feature + beta, elementwise with broadcasting of gamma and
/// beta over nothing: all three must share a shape.
torch::Tensor sft_modulate(const torch::Tensor& feature, const torch::Tensor& gamma,
                           const torch::Tensor& beta);

/// Spatial feature transform after every STB.  The condition network sees
/// the block's input features concatenated with the lambda map and predicts
/// gamma (initialised to 1) and beta (initialised to 0).
class SftConditionerImpl : public SideConditionerImpl {
public:
  SftConditionerImpl(std::vector<StageShape> stages, int64_t width);

  Mechanism mechanism() const override { return Mechanism::Sft; }
  SideContext prepare(const torch::Tensor& source, double lambda) override;
  torch::Tensor after_block(size_t stage, const torch::Tensor& block_input,
                            const torch::Tensor& block_output, const SideContext& ctx) override;

  /// gamma and beta maps for one stage.
  std::pair<torch::Tensor, torch::Tensor> affine(size_t stage, const torch::Tensor& block_input,
                                                 double lambda);

private:
  torch::nn::ModuleList condition_nets{nullptr};
  torch::nn::ModuleList gamma_heads{nullptr};
  torch::nn::ModuleList beta_heads{nullptr};
};

/// Adds a per-channel shift to a [B, H, W, C] token grid; shift is [B, C].
torch::Tensor beta_shift(const torch::Tensor& grid, const torch::Tensor& shift);

/// Channel-wise shifting after every transformer layer, computed from lambda
/// by a shared two-layer MLP and one (zero-initialised) projection per layer.
class BetaConditionerImpl : public SideConditionerImpl {
public:
  BetaConditionerImpl(std::vector<StageShape> stages, int64_t width);

  Mechanism mechanism() const override { return Mechanism::Beta; }
  SideContext prepare(const torch::Tensor& source, double lambda) override;

  /// [stage][layer] shift vectors of shape [batch, C].
  std::vector<std::vector<torch::Tensor>> shifts(double lambda, int64_t batch,
                                                 const torch::TensorOptions& options);

private:
  std::vector<StageShape> stages_;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::ModuleList projections{nullptr};
};

std::shared_ptr<SideConditionerImpl> make_conditioner(Mechanism mechanism, Side side,
                                                      int64_t source_channels,
                                                      std::vector<StageShape> stages,
                                                      int64_t width);

}  // namespace pvqc::cond
