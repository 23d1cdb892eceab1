// SPDX-License-Identifier: Apache-2.0
#include "pvqc/attention.hpp"

#include "pvqc/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace pvqc::wt {
namespace {
thread_local AttentionTrace* active_trace = nullptr;
}

AttentionTrace::AttentionTrace() : previous_(active_trace) { active_trace = this; }
AttentionTrace::~AttentionTrace() { active_trace = previous_; }

void record_attention_call(const AttentionCall& call) {
  if (active_trace != nullptr) active_trace->calls_.push_back(call);
}

torch::Tensor prompted_attention(const torch::Tensor& image_windows,
                                 const torch::Tensor& prompt_windows, const AttentionParams& params,
                                 const torch::Tensor& mask, bool mask_prompts) {
  if (image_windows.dim() != 3) throw ShapeError("prompted_attention: image windows must be 3-D");
  const int64_t bw = image_windows.size(0), n = image_windows.size(1),
                c = image_windows.size(2);
  const int64_t heads = params.heads;
  if (heads < 1 || c % heads != 0) {
    throw ShapeError("prompted_attention: " + std::to_string(c) + " channels not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (params.qkv_weight.dim() != 2 || params.qkv_weight.size(0) != 3 * c ||
      params.qkv_weight.size(1) != c) {
    throw ShapeError("prompted_attention: qkv weight must be [3C, C]");
  }
  const bool prompted = prompt_windows.defined();
  int64_t n_prompt = 0;
  if (prompted) {
    n_prompt = prompt_windows.size(1);
    if (prompt_windows.dim() != 3 || prompt_windows.size(0) != bw ||
        prompt_windows.size(2) != c) {
      throw ShapeError("prompted_attention: prompt windows must be [Bw, N/4, C]");
    }
    if (n % 4 != 0 || n_prompt * 4 != n) {
      throw ShapeError("prompted_attention: " + std::to_string(n_prompt) +
                       " prompt tokens per window, expected a quarter of " + std::to_string(n));
    }
  }
  const int64_t m = n + n_prompt;
  record_attention_call({n, m, prompted});

  const int64_t head_dim = c / heads;
  const auto& w = params.qkv_weight;
  const auto& b = params.qkv_bias;
  auto project = [&](const torch::Tensor& tokens, int64_t part) {
    auto wp = w.narrow(0, part * c, c);
    auto out = torch::matmul(tokens, wp.t());
    if (b.defined()) out = out + b.narrow(0, part * c, c);
    // [Bw, T, C] -> [Bw, heads, T, head_dim]
    return out.reshape({bw, -1, heads, head_dim}).permute({0, 2, 1, 3});
  };

  auto q = project(image_windows, 0);
  torch::Tensor kv_tokens = prompted ? torch::cat({prompt_windows, image_windows}, 1) : image_windows;
  auto k = project(kv_tokens, 1);
  auto v = project(kv_tokens, 2);

  auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  if (params.bias.defined()) {
    if (params.bias.dim() != 3 || params.bias.size(0) != heads || params.bias.size(1) != n ||
        params.bias.size(2) != m) {
      throw ShapeError("prompted_attention: bias must be [heads, N, M]");
    }
    logits = logits + params.bias.unsqueeze(0);
  }
  if (mask.defined()) {
    const int64_t nw = mask.size(0);
    if (mask.dim() != 3 || bw % nw != 0 || mask.size(1) != n || mask.size(2) != m) {
      throw ShapeError("prompted_attention: mask must be [nW, N, M] with Bw a multiple of nW");
    }
    logits = logits.reshape({bw / nw, nw, heads, n, m}) +
             mask.to(logits.dtype()).unsqueeze(1).unsqueeze(0);
    logits = logits.reshape({bw, heads, n, m});
  }
  if (prompted && mask_prompts) {
    auto column = torch::zeros({m}, logits.options());
    column.narrow(0, 0, n_prompt).fill_(-std::numeric_limits<double>::infinity());
    logits = logits + column;
  }
  if (torch::isnan(logits).any().item<bool>()) {
    throw NumericError("prompted_attention: NaN attention logits");
  }
  auto out = torch::matmul(torch::softmax(logits, -1), v);  // [Bw, heads, N, head_dim]
  return out.permute({0, 2, 1, 3}).reshape({bw, n, c});
}

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t heads, int64_t window)
    : dim_(dim), heads_(heads), window_(window) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  const int64_t span = 2 * window - 1;
  relative_bias_table = register_parameter(
      "relative_bias_table", torch::randn({span * span, heads}) * 0.02);
  prompt_bias = register_parameter("prompt_bias", torch::zeros({heads}));

  const int64_t n = window * window;
  auto index = torch::empty({n * n}, torch::kLong);
  auto acc = index.accessor<int64_t, 1>();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const int64_t dy = i / window - j / window + window - 1;
      const int64_t dx = i % window - j % window + window - 1;
      acc[i * n + j] = dy * span + dx;
    }
  }
  // Derived from the window size, so kept out of the state dict.
  relative_index_ = index;
}

torch::Tensor WindowAttentionImpl::realized_bias(bool with_prompts) const {
  const int64_t n = window_ * window_;
  auto image = relative_bias_table.index_select(0, relative_index_)
                   .reshape({n, n, heads_})
                   .permute({2, 0, 1});
  if (!with_prompts) return image;
  auto prompt = prompt_bias.reshape({heads_, 1, 1}).expand({heads_, n, n / 4});
  return torch::cat({prompt, image}, 2);
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& image_windows,
                                           const torch::Tensor& prompt_windows,
                                           const torch::Tensor& mask, bool mask_prompts) {
  if (image_windows.size(1) != window_ * window_) {
    throw ShapeError("WindowAttention: expected " + std::to_string(window_ * window_) +
                     " tokens per window");
  }
  AttentionParams params{qkv->weight, qkv->bias, realized_bias(prompt_windows.defined()), heads_};
  return proj(prompted_attention(image_windows, prompt_windows, params, mask, mask_prompts));
}

}  // namespace pvqc::wt
