// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/attention.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace pvqc::wt {

/// Shape of one Swin-Transformer block (STB).
struct StbConfig {
  int64_t depth = 2;   ///< layers per block (T)
  int64_t dim = 32;    ///< channels per token
  int64_t heads = 2;
  int64_t window = 4;  ///< window side; odd layers shift by window / 2
  double mlp_ratio = 2.0;

  void validate() const;
};

/// Per-call conditioning for one block.  Either vector may be empty; when
/// non-empty it must hold exactly one entry per layer.
struct BlockConditioning {
  /// [B, h', w', C] prompt grids at half the (padded) token resolution.
  std::vector<torch::Tensor> prompts;
  /// [B, C] additive per-channel shifts applied to each layer's output.
  std::vector<torch::Tensor> layer_shifts;
  /// Forces every prompt logit to -inf (used to check prompt neutrality).
  bool mask_prompts = false;
};

/// LN -> (S)W-MSA (optionally prompted) -> residual -> LN -> MLP -> residual.
class SwinLayerImpl : public torch::nn::Module {
public:
  SwinLayerImpl(int64_t dim, int64_t heads, int64_t window, int64_t shift, double mlp_ratio);

  /// grid: [B, H, W, C] with H, W multiples of the window side.
  torch::Tensor forward(const torch::Tensor& grid, const torch::Tensor& prompts,
                        bool mask_prompts = false);

  int64_t nominal_shift() const { return shift_; }

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  WindowAttention attn{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};

private:
  int64_t window_, shift_;
};
TORCH_MODULE(SwinLayer);

class SwinBlockImpl : public torch::nn::Module {
public:
  explicit SwinBlockImpl(const StbConfig& config);

  /// grid: [B, h, w, C] tokens.  The grid is replicate-padded to a multiple
  /// of the window side and cropped back afterwards; prompts are padded to
  /// half the padded size.
  torch::Tensor forward(const torch::Tensor& grid, const BlockConditioning& cond = {});

  const StbConfig& config() const { return config_; }
  /// Prompt grid size expected for an h x w token grid (before padding).
  static std::pair<int64_t, int64_t> prompt_extent(int64_t height, int64_t width);

  torch::nn::ModuleList layers{nullptr};

private:
  StbConfig config_;
};
TORCH_MODULE(SwinBlock);

}  // namespace pvqc::wt
