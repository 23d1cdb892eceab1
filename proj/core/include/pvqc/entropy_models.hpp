// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/range_coder.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pvqc::entropy {

inline constexpr double kProbabilityFloor = 1e-9;
inline constexpr double kTailMass = 1e-9;
inline constexpr std::int32_t kMaxSupport = 255;

enum class QuantMode {
  Noise,     ///< y + U(-0.5, 0.5); training surrogate for the rate term
  RoundSte,  ///< round(y - mean) + mean, identity gradient
  Hard,      ///< integer codes round(y - mean) as int32
};

/// Uniform scalar quantization relative to `mean` (undefined mean == 0).
/// Rounding is half-to-even.  Noise mode draws from `gen` when given.
torch::Tensor quantize(const torch::Tensor& y, const torch::Tensor& mean, QuantMode mode,
                       std::optional<torch::Generator> gen = std::nullopt);

/// P(value) for a unit-width bin of N(mean, scale^2), floored at
/// kProbabilityFloor.  Differentiable in all arguments.
torch::Tensor likelihood_gaussian(const torch::Tensor& value, const torch::Tensor& mean,
                                  const torch::Tensor& scale);

/// Scalar version of likelihood_gaussian in double precision, unfloored.
double gaussian_bin_probability(double value, double mean, double scale);

/// Total information content sum(-log2 p) in bits.
torch::Tensor estimate_rate(const torch::Tensor& probabilities);
double estimate_rate(std::span<const double> probabilities);

/// Per-channel learned monotone CDF (the "factorized" prior of a
/// hyperprior model).  Channel c's CDF is sigmoid(f_c(x)) with f_c a stack
/// of 1-D layers whose weights are kept positive through softplus and whose
/// nonlinearities x + tanh(a) tanh(x) have tanh(a) > -1, so f_c is strictly
/// increasing and unbounded in both directions.
class FactorizedPriorImpl : public torch::nn::Module {
public:
  explicit FactorizedPriorImpl(int64_t channels, std::vector<int64_t> filters = {3, 3, 3},
                               double init_scale = 10.0);

  /// Logits of the CDF at x, x shaped [C, 1, N].
  torch::Tensor logits_cumulative(const torch::Tensor& x) const;
  /// CDF at x for every channel, x shaped [C, N].
  torch::Tensor cdf(const torch::Tensor& x) const;
  /// Bin probabilities F(v + 0.5) - F(v - 0.5) for z shaped [B, C, H, W],
  /// floored at kProbabilityFloor.
  torch::Tensor likelihood(const torch::Tensor& z) const;

  /// One CDF table per channel over the values carrying all but kTailMass
  /// of the probability (clamped to +-kMaxSupport).  Evaluated in double.
  std::vector<CdfTable> build_tables() const;

  int64_t channels() const { return channels_; }

private:
  int64_t channels_;
  std::vector<torch::Tensor> matrices_, biases_, factors_;
};
TORCH_MODULE(FactorizedPrior);

/// Fixed bank of quantized Gaussian CDFs indexed by scale.  Both sides build
/// identical tables from the same scale list; the only data-dependent step
/// is the scale -> index lookup.
class GaussianConditionalTables {
public:
  /// 64 log-spaced scales from 0.11 to 256.
  static std::vector<double> default_scales();

  explicit GaussianConditionalTables(std::vector<double> scales = default_scales());

  /// Index of the smallest table scale >= sigma (the last one when sigma
  /// exceeds every entry).
  std::int32_t index_for(float sigma) const;
  const std::vector<CdfTable>& tables() const { return tables_; }
  const std::vector<double>& scales() const { return scales_; }

private:
  std::vector<double> scales_;
  std::vector<float> scales_f_;
  std::vector<CdfTable> tables_;
};

}  // namespace pvqc::entropy
