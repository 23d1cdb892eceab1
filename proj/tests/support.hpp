// SPDX-License-Identifier: Apache-2.0
// Helpers that drive library components the way the oracle tests compare
// them.  Shared by the unit tests and the acceptance binary.
#pragma once

#include "oracles.hpp"

#include "pvqc/attention.hpp"
#include "pvqc/window.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <random>

namespace support {

/// One random attention configuration.
struct AttentionCase {
  int64_t window = 4;
  int64_t heads = 2;
  int64_t head_dim = 4;
  int64_t windows_y = 1, windows_x = 1;
  int64_t shift = 0;
  bool prompted = true;

  int64_t dim() const { return heads * head_dim; }
  int64_t height() const { return window * windows_y; }
  int64_t width() const { return window * windows_x; }
};

inline AttentionCase random_case(std::mt19937_64& rng) {
  AttentionCase c;
  const int64_t windows[] = {4, 8};
  c.window = windows[rng() % 2];
  c.heads = 1 + static_cast<int64_t>(rng() % 3);
  c.head_dim = 2 + static_cast<int64_t>(rng() % 4);
  c.windows_y = 1 + static_cast<int64_t>(rng() % 2);
  c.windows_x = 1 + static_cast<int64_t>(rng() % (c.window == 4 ? 3 : 2));
  // Shifts must be even so prompt windows shift by an integer.
  c.shift = (rng() % 2 == 0) ? 0 : 2 * (1 + static_cast<int64_t>(rng() % (c.window / 2 - 1)));
  c.prompted = rng() % 4 != 0;
  return c;
}

/// Randomises every attention parameter well away from its initial scale.
inline void randomize(pvqc::wt::WindowAttention& attn, std::uint64_t seed) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (auto& p : attn->parameters()) p.copy_(torch::randn(p.sizes(), gen, p.options()) * 0.5);
}

inline oracle::DenseAttentionWeights weights_of(pvqc::wt::WindowAttention& attn) {
  return {attn->qkv->weight, attn->qkv->bias,        attn->relative_bias_table,
          attn->prompt_bias, attn->proj->weight,     attn->proj->bias};
}

/// Library path: partition, prompted attention with output projection,
/// merge.  grid [H, W, C]; prompts [H/2, W/2, C] or undefined.
inline torch::Tensor library_window_attention(pvqc::wt::WindowAttention& attn,
                                              const torch::Tensor& grid,
                                              const torch::Tensor& prompts, int64_t shift,
                                              bool mask_prompts = false) {
  const int64_t window = attn->window();
  const int64_t h = grid.size(0), w = grid.size(1);
  auto windows = pvqc::wt::window_partition(grid.unsqueeze(0), window, shift);
  torch::Tensor pw;
  if (prompts.defined()) pw = pvqc::wt::prompt_partition(prompts.unsqueeze(0), window, shift);
  auto mask = pvqc::wt::shifted_window_mask(h, w, window, shift, prompts.defined());
  if (mask.defined()) mask = mask.to(grid.dtype());
  auto out = attn->forward(windows, pw, mask, mask_prompts);
  return pvqc::wt::window_merge(out, window, shift, h, w).squeeze(0);
}

/// Max |library - oracle| for one case in single precision.
inline double attention_oracle_gap(const AttentionCase& c, std::uint64_t seed) {
  torch::manual_seed(seed);
  pvqc::wt::WindowAttention attn(c.dim(), c.heads, c.window);
  randomize(attn, seed);
  auto grid = torch::randn({c.height(), c.width(), c.dim()});
  torch::Tensor prompts;
  if (c.prompted) prompts = torch::randn({c.height() / 2, c.width() / 2, c.dim()});
  torch::NoGradGuard guard;
  auto got = library_window_attention(attn, grid, prompts, c.shift).to(torch::kFloat64);
  auto want = oracle::dense_window_attention(grid, prompts, weights_of(attn), c.heads, c.window,
                                             c.shift);
  return (got - want).abs().max().item<double>();
}

}  // namespace support
