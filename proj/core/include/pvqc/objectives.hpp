// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pvqc::obj {

/// Quality metrics usable as distortion objectives.  Registry names:
/// "psnr", "msssim", "perceptual".
enum class Metric { Psnr, MsSsim, Perceptual };

std::string to_string(Metric m);
Metric parse_metric(std::string_view name);

/// Ordered pair (d_A, d_B) of distinct metrics; lambda = 1 selects d_A.
struct MetricPair {
  Metric a = Metric::Perceptual;
  Metric b = Metric::Psnr;

  /// "perceptual_psnr" or "msssim_psnr" (any "<a>_<b>" of distinct names).
  static MetricPair parse(std::string_view text);
  std::string name() const;
  void validate() const;
};

/// Rate weights, one model per index.
inline constexpr std::array<double, 4> kRateWeights{5.556, 2.857, 1.493, 0.769};
double rate_weight(int rate_index);

inline constexpr double kPsnrCapDb = 100.0;

/// Mean squared error on the 0..255 scale over all elements.
torch::Tensor mse255(const torch::Tensor& x, const torch::Tensor& x_hat);
/// 10 log10(255^2 / mse255), reported as kPsnrCapDb for identical inputs.
double psnr(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Number of MS-SSIM scales used for an image whose shorter side is
/// `min_side`: the largest S <= 5 with min_side >= 11 * 2^(S-1).  Throws
/// ShapeError below 11 pixels.
int ms_ssim_scales(int64_t min_side);

/// MS-SSIM for images in [0,1], shaped [B, C, H, W]; mean over the batch.
/// 11x11 Gaussian window (sigma 1.5), valid filtering, standard five-scale
/// weights truncated and renormalized when fewer scales fit.
torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Learned-perceptual-distance proxy: a frozen random ReLU conv stack
/// (fixed seed) whose channel-normalized features are compared like LPIPS
/// with unit layer weights.  Pretrained weights can replace the random ones
/// through load_weights().
class PerceptualProxyImpl : public torch::nn::Module {
public:
  static constexpr std::uint64_t kSeed = 0x5EED;

  explicit PerceptualProxyImpl(std::uint64_t seed = kSeed);

  /// Per-image distances [B] for images in [0,1].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& x_hat) const;

  /// Replaces the feature extractor from a named-array container written by
  /// save_weights() (arrays "conv<i>.weight", "conv<i>.bias").
  void load_weights(const std::string& path);
  void save_weights(const std::string& path) const;

private:
  std::vector<torch::Tensor> features(const torch::Tensor& x) const;

  std::vector<torch::Tensor> weights_, biases_;
  std::vector<int64_t> strides_;
};
TORCH_MODULE(PerceptualProxy);

/// Shared frozen proxy instance (seed 0x5EED).
const PerceptualProxy& default_perceptual();

/// Mean perceptual proxy distance over the batch.
torch::Tensor perceptual_distance(const torch::Tensor& x, const torch::Tensor& x_hat);

/// Scaled distortions: 0.01 * mse255, 25 * (1 - MS-SSIM), 2.5 * perceptual.
torch::Tensor scaled_distortion(Metric metric, const torch::Tensor& x, const torch::Tensor& x_hat);
double distortion_scale(Metric metric);

struct LossBreakdown {
  torch::Tensor rate_bpp;
  torch::Tensor d_a;
  torch::Tensor d_b;
  torch::Tensor total;
  double lambda = 0.0;
  double rate_weight = 0.0;
};

/// total = rate_weight * rate + lambda * d_a + (1 - lambda) * d_b.
torch::Tensor combine_loss(const torch::Tensor& rate_bpp, const torch::Tensor& d_a,
                           const torch::Tensor& d_b, double lambda, double rate_weight);

/// Variable-objective rate-distortion loss for one metric pair.
LossBreakdown rd_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                      const torch::Tensor& rate_bpp, double lambda, double rate_weight,
                      const MetricPair& pair);

}  // namespace pvqc::obj
