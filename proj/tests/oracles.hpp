// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations shared by the unit and acceptance
// tests.  Everything here is written with explicit loops and coordinate
// arithmetic, without the reshape/roll machinery of the library.
#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

struct DenseAttentionWeights {
  torch::Tensor qkv_weight;       // [3C, C]
  torch::Tensor qkv_bias;         // [3C]
  torch::Tensor table;            // [(2w-1)^2, heads]
  torch::Tensor prompt_bias;      // [heads]
  torch::Tensor proj_weight;      // [C, C]
  torch::Tensor proj_bias;        // [C]
};

// Swin slice label of a position in the rolled frame.
inline int slice_label(int64_t pos, int64_t extent, int64_t window, int64_t shift) {
  if (shift == 0) return 0;
  if (pos < extent - window) return 0;
  if (pos < extent - shift) return 1;
  return 2;
}

// Flattens any tensor to a row-major vector of doubles.
inline std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous();
  return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
}

// One (S)W-MSA attention sublayer evaluated on the whole grid with plain
// loops: for every query cell the key/value set is materialised explicitly
// as the concatenation [prompt keys, image keys] of its window, and one
// softmax is taken over it.  grid: [H, W, C]; prompts: [H/2, W/2, C] or
// undefined.  Returns [H, W, C] in double precision.
inline torch::Tensor dense_window_attention(const torch::Tensor& grid, const torch::Tensor& prompts,
                                            const DenseAttentionWeights& wts, int64_t heads,
                                            int64_t window, int64_t shift,
                                            bool mask_prompts = false) {
  const int64_t H = grid.size(0), W = grid.size(1), C = grid.size(2);
  const int64_t hd = C / heads;
  const int64_t span = 2 * window - 1;
  const int64_t pw = window / 2, ps = shift / 2;
  const auto x = to_vector(grid);
  const auto wqkv = to_vector(wts.qkv_weight), bqkv = to_vector(wts.qkv_bias);
  const auto table = to_vector(wts.table), pbias = to_vector(wts.prompt_bias);
  const auto wproj = to_vector(wts.proj_weight), bproj = to_vector(wts.proj_bias);
  std::vector<double> p;
  int64_t PH = 0, PW = 0;
  if (prompts.defined()) {
    p = to_vector(prompts);
    PH = prompts.size(0);
    PW = prompts.size(1);
  }
  const double inf = std::numeric_limits<double>::infinity();

  // Row `row` of W_qkv applied to token t.
  auto project = [&](const double* t, int64_t row) {
    double acc = bqkv[static_cast<size_t>(row)];
    for (int64_t c = 0; c < C; ++c) acc += wqkv[static_cast<size_t>(row * C + c)] * t[c];
    return acc;
  };
  auto wrap = [](int64_t v, int64_t n) { return ((v % n) + n) % n; };

  std::vector<double> out(static_cast<size_t>(H * W * C));
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      const int64_t rr = wrap(r - shift, H), rc = wrap(c - shift, W);
      const int64_t wy = rr / window, wx = rc / window;
      const int label = slice_label(rr, H, window, shift) * 3 + slice_label(rc, W, window, shift);

      // Explicit [P, I] key list: token pointer plus per-head bias.
      std::vector<const double*> keys;
      std::vector<std::vector<double>> bias;
      for (int64_t i = 0; i < PH; ++i) {
        for (int64_t j = 0; j < PW; ++j) {
          const int64_t ri = wrap(i - ps, PH), rj = wrap(j - ps, PW);
          if (ri / pw != wy || rj / pw != wx) continue;
          const int key_label =
              slice_label(2 * ri, H, window, shift) * 3 + slice_label(2 * rj, W, window, shift);
          const bool blocked = key_label != label || mask_prompts;
          keys.push_back(&p[static_cast<size_t>((i * PW + j) * C)]);
          std::vector<double> b(static_cast<size_t>(heads));
          for (int64_t h = 0; h < heads; ++h) b[static_cast<size_t>(h)] = blocked ? -inf : pbias[static_cast<size_t>(h)];
          bias.push_back(std::move(b));
        }
      }
      for (int64_t kr = 0; kr < H; ++kr) {
        for (int64_t kc = 0; kc < W; ++kc) {
          const int64_t krr = wrap(kr - shift, H), krc = wrap(kc - shift, W);
          if (krr / window != wy || krc / window != wx) continue;
          const int key_label =
              slice_label(krr, H, window, shift) * 3 + slice_label(krc, W, window, shift);
          const int64_t dy = rr % window - krr % window + window - 1;
          const int64_t dx = rc % window - krc % window + window - 1;
          keys.push_back(&x[static_cast<size_t>((kr * W + kc) * C)]);
          std::vector<double> b(static_cast<size_t>(heads));
          for (int64_t h = 0; h < heads; ++h) {
            b[static_cast<size_t>(h)] =
                key_label != label ? -inf : table[static_cast<size_t>((dy * span + dx) * heads + h)];
          }
          bias.push_back(std::move(b));
        }
      }

      const double* query = &x[static_cast<size_t>((r * W + c) * C)];
      std::vector<double> attended(static_cast<size_t>(C), 0.0);
      for (int64_t h = 0; h < heads; ++h) {
        std::vector<double> logits(keys.size());
        double top = -inf;
        for (size_t m = 0; m < keys.size(); ++m) {
          double dot = 0.0;
          for (int64_t d = 0; d < hd; ++d) {
            dot += project(query, h * hd + d) * project(keys[m], C + h * hd + d);
          }
          logits[m] = dot / std::sqrt(static_cast<double>(hd)) + bias[m][static_cast<size_t>(h)];
          top = std::max(top, logits[m]);
        }
        double z = 0.0;
        for (auto& l : logits) {
          l = std::exp(l - top);
          z += l;
        }
        for (size_t m = 0; m < keys.size(); ++m) {
          for (int64_t d = 0; d < hd; ++d) {
            attended[static_cast<size_t>(h * hd + d)] +=
                logits[m] / z * project(keys[m], 2 * C + h * hd + d);
          }
        }
      }
      for (int64_t o = 0; o < C; ++o) {
        double acc = bproj[static_cast<size_t>(o)];
        for (int64_t i = 0; i < C; ++i) acc += wproj[static_cast<size_t>(o * C + i)] * attended[static_cast<size_t>(i)];
        out[static_cast<size_t>((r * W + c) * C + o)] = acc;
      }
    }
  }
  return torch::tensor(out, torch::kFloat64).reshape({H, W, C});
}

// Central finite differences of a scalar function of one tensor; returns the
// norm-wise relative error against an analytic gradient.
inline double gradient_relative_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                      const torch::Tensor& x, double eps = 1e-6) {
  auto xa = x.detach().clone().requires_grad_(true);
  auto y = f(xa);
  y.backward();
  auto analytic = xa.grad().detach().reshape(-1);
  auto base = x.detach().clone().reshape(-1);
  auto numeric = torch::zeros_like(base);
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < base.numel(); ++i) {
    auto plus = base.clone(), minus = base.clone();
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(plus.reshape(x.sizes())).item<double>();
    const double fm = f(minus.reshape(x.sizes())).item<double>();
    numeric[i] = (fp - fm) / (2.0 * eps);
  }
  const double denom = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  if (denom == 0.0) return 0.0;
  return (analytic - numeric).norm().item<double>() / denom;
}

// Shannon entropy in bits of a discrete distribution.
inline double entropy_bits(const std::vector<double>& pmf) {
  double h = 0.0;
  for (double p : pmf) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

// Standard normal CDF.
inline double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace oracle
