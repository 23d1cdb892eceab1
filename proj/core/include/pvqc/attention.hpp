// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace pvqc::wt {

/// Shapes observed by one prompted_attention call.
struct AttentionCall {
  int64_t queries = 0;  ///< N
  int64_t keys = 0;     ///< M
  bool prompted = false;
};

/// Records every attention call made on the current thread while alive.
/// Nesting is not supported; the innermost trace wins.
class AttentionTrace {
public:
  AttentionTrace();
  ~AttentionTrace();
  AttentionTrace(const AttentionTrace&) = delete;
  AttentionTrace& operator=(const AttentionTrace&) = delete;

  const std::vector<AttentionCall>& calls() const { return calls_; }

private:
  friend void record_attention_call(const AttentionCall&);
  std::vector<AttentionCall> calls_;
  AttentionTrace* previous_;
};

void record_attention_call(const AttentionCall& call);

/// Projection weights and the realized positional bias for one attention call.
struct AttentionParams {
  torch::Tensor qkv_weight;  ///< [3C, C]; rows are W_Q, W_K, W_V stacked (y = x W^T)
  torch::Tensor qkv_bias;    ///< [3C] or undefined
  torch::Tensor bias;        ///< [heads, N, M] added to the logits
  int64_t heads = 1;
};

/// Multi-head window attention where queries come from the image tokens only
/// and keys/values from the concatenation [prompts, image].
///
/// image_windows: [Bw, N, C]; prompt_windows: [Bw, N/4, C] or undefined.
/// mask: optional additive [nW, N, M] mask, Bw must be a multiple of nW.
/// mask_prompts: adds -inf to every prompt logit.
/// Returns the per-head outputs concatenated back to [Bw, N, C]; the output
/// projection is not applied here.
torch::Tensor prompted_attention(const torch::Tensor& image_windows,
                                 const torch::Tensor& prompt_windows, const AttentionParams& params,
                                 const torch::Tensor& mask = {}, bool mask_prompts = false);

/// W-MSA with a learned relative position bias table for image keys and one
/// learned per-head bias shared by all prompt keys.
class WindowAttentionImpl : public torch::nn::Module {
public:
  WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window);

  torch::Tensor forward(const torch::Tensor& image_windows, const torch::Tensor& prompt_windows,
                        const torch::Tensor& mask = {}, bool mask_prompts = false);

  /// [heads, N, M] bias matrix; prompt columns first when with_prompts.
  torch::Tensor realized_bias(bool with_prompts) const;

  int64_t dim() const { return dim_; }
  int64_t heads() const { return heads_; }
  int64_t window() const { return window_; }

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
  torch::Tensor relative_bias_table;  ///< [(2w-1)^2, heads]
  torch::Tensor prompt_bias;          ///< [heads]

private:
  int64_t dim_, heads_, window_;
  torch::Tensor relative_index_;  ///< [N*N] int64 lookup into the bias table
};
TORCH_MODULE(WindowAttention);

}  // namespace pvqc::wt
