// SPDX-License-Identifier: Apache-2.0
#include "pvqc/swin_block.hpp"

#include "pvqc/error.hpp"
#include "pvqc/window.hpp"

#include <algorithm>
#include <string>

namespace pvqc::wt {

void StbConfig::validate() const {
  if (depth < 1) throw ConfigError("STB depth must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("STB dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (window < 2 || window % 4 != 0) {
    // Shifted prompt windows need window/2 and shift/2 = window/4 integral.
    throw ConfigError("STB window side must be a positive multiple of 4, got " +
                      std::to_string(window));
  }
  if (mlp_ratio <= 0.0) throw ConfigError("STB mlp_ratio must be positive");
}

SwinLayerImpl::SwinLayerImpl(int64_t dim, int64_t heads, int64_t window, int64_t shift,
                             double mlp_ratio)
    : window_(window), shift_(shift) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", WindowAttention(dim, heads, window));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const auto hidden = static_cast<int64_t>(static_cast<double>(dim) * mlp_ratio);
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor SwinLayerImpl::forward(const torch::Tensor& grid, const torch::Tensor& prompts,
                                     bool mask_prompts) {
  const int64_t height = grid.size(1), width = grid.size(2);
  // A grid no larger than one window gains nothing from shifting.
  const int64_t shift = std::min(height, width) <= window_ ? 0 : shift_;

  auto windows = window_partition(norm1(grid), window_, shift);
  torch::Tensor prompt_windows;
  if (prompts.defined()) prompt_windows = prompt_partition(norm1(prompts), window_, shift);
  torch::Tensor mask = shifted_window_mask(height, width, window_, shift, prompts.defined());
  if (mask.defined()) mask = mask.to(grid.dtype());

  auto attended = attn(windows, prompt_windows, mask, mask_prompts);
  auto x = grid + window_merge(attended, window_, shift, height, width);
  return x + fc2(torch::gelu(fc1(norm2(x))));
}

SwinBlockImpl::SwinBlockImpl(const StbConfig& config) : config_(config) {
  config_.validate();
  layers = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.depth; ++i) {
    const int64_t shift = (i % 2 == 1) ? config_.window / 2 : 0;
    layers->push_back(SwinLayer(config_.dim, config_.heads, config_.window, shift, config_.mlp_ratio));
  }
}

std::pair<int64_t, int64_t> SwinBlockImpl::prompt_extent(int64_t height, int64_t width) {
  return {(height + 1) / 2, (width + 1) / 2};
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& grid, const BlockConditioning& cond) {
  if (grid.dim() != 4 || grid.size(3) != config_.dim) {
    throw ShapeError("SwinBlock: expected [B, H, W, " + std::to_string(config_.dim) + "] tokens");
  }
  const auto depth = static_cast<size_t>(config_.depth);
  if (!cond.prompts.empty() && cond.prompts.size() != depth) {
    throw ShapeError("SwinBlock: got " + std::to_string(cond.prompts.size()) +
                     " prompt grids for " + std::to_string(depth) + " layers");
  }
  if (!cond.layer_shifts.empty() && cond.layer_shifts.size() != depth) {
    throw ShapeError("SwinBlock: got " + std::to_string(cond.layer_shifts.size()) +
                     " layer shifts for " + std::to_string(depth) + " layers");
  }
  const int64_t height = grid.size(1), width = grid.size(2);
  auto x = pad_grid(grid, config_.window);
  const int64_t padded_h = x.size(1), padded_w = x.size(2);

  for (size_t i = 0; i < depth; ++i) {
    torch::Tensor prompts;
    if (!cond.prompts.empty()) {
      const auto& p = cond.prompts[i];
      const auto [min_h, min_w] = prompt_extent(height, width);
      if (p.dim() != 4 || p.size(0) != x.size(0) || p.size(3) != config_.dim ||
          p.size(1) < min_h || p.size(1) > padded_h / 2 || p.size(2) < min_w ||
          p.size(2) > padded_w / 2) {
        throw ShapeError("SwinBlock: prompt grid for layer " + std::to_string(i) +
                         " does not match a " + std::to_string(height) + "x" +
                         std::to_string(width) + " token grid");
      }
      prompts = pad_grid_to(p, padded_h / 2, padded_w / 2);
    }
    x = layers[i]->as<SwinLayer>()->forward(x, prompts, cond.mask_prompts);
    if (!cond.layer_shifts.empty()) {
      const auto& s = cond.layer_shifts[i];
      if (s.dim() != 2 || s.size(0) != x.size(0) || s.size(1) != config_.dim) {
        throw ShapeError("SwinBlock: layer shift must be [B, C]");
      }
      x = x + s.unsqueeze(1).unsqueeze(1);
    }
  }
  if (padded_h != height || padded_w != width) {
    x = x.narrow(1, 0, height).narrow(2, 0, width);
  }
  return x;
}

}  // namespace pvqc::wt
