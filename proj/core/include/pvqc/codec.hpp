// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/conditioning.hpp"
#include "pvqc/entropy_models.hpp"
#include "pvqc/swin_block.hpp"
#include "pvqc/tensor_archive.hpp"
#include "pvqc/variant.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace pvqc {

/// Architecture of the codec.  y sits at 1/16 of the (padded) input, z at
/// 1/64; every main-transform stage is one STB.
struct CodecConfig {
  int64_t latent_channels = 48;  ///< C_y
  int64_t hyper_channels = 32;   ///< C_z
  std::vector<int64_t> dims{32, 48, 48, 48};
  std::vector<int64_t> depths{2, 2, 2, 2};
  std::vector<int64_t> heads{2, 3, 3, 3};
  int64_t window = 4;
  double mlp_ratio = 2.0;
  int64_t hyper_dim = 48;
  int64_t hyper_depth = 2;
  int64_t hyper_heads = 3;
  int64_t cond_width = 64;
  double sigma_min = 0.11;
  Variant variant = Variant::None;
  Mechanism mechanism = Mechanism::Prompt;

  static constexpr int64_t kStride = 64;

  static CodecConfig toy();
  static CodecConfig full();

  void validate() const;
  /// Flat key=value form used in checkpoints.
  std::map<std::string, std::string> to_map() const;
  static CodecConfig from_map(const std::map<std::string, std::string>& kv);
  /// Same tensors and shapes (conditioning choice included).
  bool operator==(const CodecConfig&) const = default;
};

/// Conv / STB ladder from image to y (4 downsamplings of 2).
class AnalysisTransformImpl : public torch::nn::Module {
public:
  explicit AnalysisTransformImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, cond::SideConditionerImpl* cond,
                        const cond::SideContext* ctx, bool mask_prompts = false);

  torch::nn::ModuleList downs{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(AnalysisTransform);

/// Mirror of the analysis ladder: STB then upsampling, ending at RGB.
class SynthesisTransformImpl : public torch::nn::Module {
public:
  explicit SynthesisTransformImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& y_hat, cond::SideConditionerImpl* cond,
                        const cond::SideContext* ctx, bool mask_prompts = false);

  torch::nn::Conv2d stem{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::ModuleList ups{nullptr};
};
TORCH_MODULE(SynthesisTransform);

class HyperAnalysisImpl : public torch::nn::Module {
public:
  explicit HyperAnalysisImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& y);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  wt::SwinBlock block{nullptr};
};
TORCH_MODULE(HyperAnalysis);

class HyperSynthesisImpl : public torch::nn::Module {
public:
  explicit HyperSynthesisImpl(const CodecConfig& cfg);
  /// Returns (mu, sigma), sigma = sigma_min + softplus(raw).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z_hat);

  torch::nn::ConvTranspose2d up1{nullptr}, up2{nullptr};
  wt::SwinBlock block{nullptr};
  torch::nn::Conv2d head{nullptr};

private:
  double sigma_min_;
  int64_t latent_channels_;
};
TORCH_MODULE(HyperSynthesis);

/// Outputs of a differentiable forward pass.
struct TrainOutput {
  torch::Tensor x_hat;       ///< unclamped, cropped to the input size
  torch::Tensor bits_y;      ///< scalar, sum of -log2 p over the batch
  torch::Tensor bits_z;
  torch::Tensor rate_bpp;    ///< (bits_y + bits_z) / (B * H * W)
  torch::Tensor y;
  torch::Tensor mu, sigma;
};

/// Parameter counts per top-level module.
struct ParameterSummary {
  std::vector<std::pair<std::string, int64_t>> groups;
  int64_t conditioning = 0;
  int64_t total = 0;
};

class CodecImpl : public torch::nn::Module {
public:
  explicit CodecImpl(CodecConfig cfg);

  const CodecConfig& config() const { return cfg_; }

  /// Replicate-pads NCHW images at the bottom/right to multiples of 64.
  static torch::Tensor pad_input(const torch::Tensor& x);

  /// x: padded [B, 3, H, W].  lambda is read only when the encoder is
  /// conditioned.
  torch::Tensor analyze(const torch::Tensor& x, double lambda);
  torch::Tensor synthesize(const torch::Tensor& y_hat, double lambda);
  torch::Tensor hyper_analyze(const torch::Tensor& y);
  std::pair<torch::Tensor, torch::Tensor> hyper_synthesize(const torch::Tensor& z_hat);

  /// Training forward pass on unpadded x in [0,1].  Additive noise for the
  /// rate terms, straight-through rounding for the reconstruction path.
  /// With noise == false every quantizer rounds (deterministic evaluation
  /// of the same graph).
  TrainOutput forward_train(const torch::Tensor& x, double lambda, bool noise = true,
                            std::optional<torch::Generator> gen = std::nullopt);

  ParameterSummary summary() const;

  /// Checkpoint I/O: config in metadata ("codec.*"), parameters and buffers
  /// by name.
  void save_to(TensorArchive& archive) const;
  /// Copies every tensor whose name and shape match; returns the names of
  /// model tensors not found in the archive.
  std::vector<std::string> load_matching(const TensorArchive& archive);
  /// Strict load: the archive's config must equal this model's.
  void load_from(const TensorArchive& archive);

  AnalysisTransform analysis{nullptr};
  SynthesisTransform synthesis{nullptr};
  HyperAnalysis hyper_analysis{nullptr};
  HyperSynthesis hyper_synthesis{nullptr};
  entropy::FactorizedPrior prior{nullptr};
  std::shared_ptr<cond::SideConditionerImpl> enc_cond;
  std::shared_ptr<cond::SideConditionerImpl> dec_cond;

  /// Masks prompt logits to -inf everywhere (neutral-prompt checks).
  bool mask_prompts = false;

private:
  CodecConfig cfg_;
};
TORCH_MODULE(Codec);

/// Reads the codec config stored in a checkpoint archive.
CodecConfig config_from_archive(const TensorArchive& archive);

}  // namespace pvqc
