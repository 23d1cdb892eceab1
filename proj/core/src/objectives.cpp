// SPDX-License-Identifier: Apache-2.0
#include "pvqc/objectives.hpp"

#include "pvqc/error.hpp"
#include "pvqc/tensor_archive.hpp"

#include <cmath>
#include <numeric>

namespace pvqc::obj {
namespace F = torch::nn::functional;

std::string to_string(Metric m) {
  switch (m) {
    case Metric::Psnr: return "psnr";
    case Metric::MsSsim: return "msssim";
    case Metric::Perceptual: return "perceptual";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  if (name == "psnr") return Metric::Psnr;
  if (name == "msssim") return Metric::MsSsim;
  if (name == "perceptual") return Metric::Perceptual;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected psnr|msssim|perceptual)");
}

MetricPair MetricPair::parse(std::string_view text) {
  const auto sep = text.find('_');
  if (sep == std::string_view::npos) {
    throw ConfigError("metric pair '" + std::string(text) + "' must look like <a>_<b>");
  }
  MetricPair pair{parse_metric(text.substr(0, sep)), parse_metric(text.substr(sep + 1))};
  pair.validate();
  return pair;
}

std::string MetricPair::name() const { return to_string(a) + "_" + to_string(b); }

void MetricPair::validate() const {
  if (a == b) throw ConfigError("metric pair needs two distinct metrics, got " + name());
}

double rate_weight(int rate_index) {
  if (rate_index < 0 || rate_index >= static_cast<int>(kRateWeights.size())) {
    throw ConfigError("rate index " + std::to_string(rate_index) + " outside 0..3");
  }
  return kRateWeights[static_cast<size_t>(rate_index)];
}

torch::Tensor mse255(const torch::Tensor& x, const torch::Tensor& x_hat) {
  if (x.sizes() != x_hat.sizes()) throw ShapeError("mse255: shape mismatch");
  return (x - x_hat).mul(255.0).pow(2).mean();
}

double psnr(const torch::Tensor& x, const torch::Tensor& x_hat) {
  torch::NoGradGuard no_grad;
  const double mse = mse255(x.to(torch::kDouble), x_hat.to(torch::kDouble)).item<double>();
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(255.0 * 255.0 / mse));
}

int ms_ssim_scales(int64_t min_side) {
  if (min_side < 11) {
    throw ShapeError("ms_ssim: image side " + std::to_string(min_side) +
                     " is smaller than the 11x11 window");
  }
  int scales = 1;
  while (scales < 5 && min_side >= 11 * (int64_t{1} << scales)) ++scales;
  return scales;
}

namespace {

constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

torch::Tensor gaussian_window(int64_t channels, const torch::TensorOptions& options) {
  constexpr int64_t size = 11;
  constexpr double sigma = 1.5;
  auto coords = torch::arange(size, options) - static_cast<double>(size / 2);
  auto g = torch::exp(-(coords * coords) / (2.0 * sigma * sigma));
  g = g / g.sum();
  return g.reshape({1, 1, 1, size}).repeat({channels, 1, 1, 1});
}

torch::Tensor gaussian_filter(const torch::Tensor& x, const torch::Tensor& win) {
  const int64_t channels = x.size(1);
  auto out = F::conv2d(x, win, F::Conv2dFuncOptions().groups(channels));
  return F::conv2d(out, win.transpose(2, 3), F::Conv2dFuncOptions().groups(channels));
}

// Per-image, per-channel SSIM and contrast-structure terms.
std::pair<torch::Tensor, torch::Tensor> ssim_terms(const torch::Tensor& x, const torch::Tensor& y,
                                                   const torch::Tensor& win) {
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto mu1 = gaussian_filter(x, win), mu2 = gaussian_filter(y, win);
  auto mu1_sq = mu1 * mu1, mu2_sq = mu2 * mu2, mu12 = mu1 * mu2;
  auto s1 = gaussian_filter(x * x, win) - mu1_sq;
  auto s2 = gaussian_filter(y * y, win) - mu2_sq;
  auto s12 = gaussian_filter(x * y, win) - mu12;
  auto cs_map = (2.0 * s12 + c2) / (s1 + s2 + c2);
  auto ssim_map = (2.0 * mu12 + c1) / (mu1_sq + mu2_sq + c1) * cs_map;
  return {ssim_map.flatten(2).mean(-1), cs_map.flatten(2).mean(-1)};
}

}  // namespace

torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& x_hat) {
  if (x.sizes() != x_hat.sizes() || x.dim() != 4) {
    throw ShapeError("ms_ssim: expected two [B, C, H, W] tensors of equal shape");
  }
  const int scales = ms_ssim_scales(std::min(x.size(2), x.size(3)));
  const double weight_sum =
      std::accumulate(kMsSsimWeights.begin(), kMsSsimWeights.begin() + scales, 0.0);
  auto win = gaussian_window(x.size(1), x.options());

  auto a = x, b = x_hat;
  torch::Tensor result;
  for (int s = 0; s < scales; ++s) {
    auto [ssim_pc, cs] = ssim_terms(a, b, win);
    const bool last = s + 1 == scales;
    // Clamped instead of ReLU'd so that pow() keeps a finite gradient.
    auto term = torch::clamp_min(last ? ssim_pc : cs, 1e-6)
                    .pow(kMsSsimWeights[static_cast<size_t>(s)] / weight_sum);
    result = result.defined() ? result * term : term;
    if (!last) {
      std::vector<int64_t> pad{a.size(2) % 2, a.size(3) % 2};
      a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2).padding(pad));
      b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2).padding(pad));
    }
  }
  return result.mean();
}

PerceptualProxyImpl::PerceptualProxyImpl(std::uint64_t seed) {
  const std::vector<std::array<int64_t, 3>> layout{{3, 16, 1}, {16, 32, 2}, {32, 64, 2}};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  for (size_t i = 0; i < layout.size(); ++i) {
    const auto [in, out, stride] = layout[i];
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    auto w = torch::randn({out, in, 3, 3}, gen, torch::kFloat) * std;
    auto b = torch::zeros({out});
    weights_.push_back(register_buffer("conv" + std::to_string(i) + "_weight", w));
    biases_.push_back(register_buffer("conv" + std::to_string(i) + "_bias", b));
    strides_.push_back(stride);
  }
}

std::vector<torch::Tensor> PerceptualProxyImpl::features(const torch::Tensor& x) const {
  std::vector<torch::Tensor> out;
  auto h = x * 2.0 - 1.0;
  for (size_t i = 0; i < weights_.size(); ++i) {
    h = torch::relu(F::conv2d(h, weights_[i].to(x.dtype()),
                              F::Conv2dFuncOptions().bias(biases_[i].to(x.dtype()))
                                  .stride(strides_[i]).padding(1)));
    out.push_back(h);
  }
  return out;
}

torch::Tensor PerceptualProxyImpl::forward(const torch::Tensor& x, const torch::Tensor& x_hat) const {
  if (x.sizes() != x_hat.sizes() || x.dim() != 4 || x.size(1) != 3) {
    throw ShapeError("perceptual_distance: expected two [B, 3, H, W] tensors of equal shape");
  }
  auto fx = features(x), fy = features(x_hat);
  torch::Tensor total;
  for (size_t i = 0; i < fx.size(); ++i) {
    auto nx = fx[i] * torch::rsqrt(fx[i].pow(2).sum(1, true) + 1e-10);
    auto ny = fy[i] * torch::rsqrt(fy[i].pow(2).sum(1, true) + 1e-10);
    auto d = (nx - ny).pow(2).sum(1).mean({1, 2});
    total = total.defined() ? total + d : d;
  }
  return total;
}

void PerceptualProxyImpl::load_weights(const std::string& path) {
  auto archive = TensorArchive::read(path);
  for (size_t i = 0; i < weights_.size(); ++i) {
    const auto prefix = "conv" + std::to_string(i);
    auto w = archive.tensor(prefix + ".weight");
    auto b = archive.tensor(prefix + ".bias");
    if (w.sizes() != weights_[i].sizes() || b.sizes() != biases_[i].sizes()) {
      throw ShapeError("perceptual weights '" + prefix + "' have the wrong shape");
    }
    torch::NoGradGuard no_grad;
    weights_[i].copy_(w);
    biases_[i].copy_(b);
  }
}

void PerceptualProxyImpl::save_weights(const std::string& path) const {
  TensorArchive archive;
  for (size_t i = 0; i < weights_.size(); ++i) {
    const auto prefix = "conv" + std::to_string(i);
    archive.put(prefix + ".weight", weights_[i]);
    archive.put(prefix + ".bias", biases_[i]);
  }
  archive.write(path);
}

const PerceptualProxy& default_perceptual() {
  static const PerceptualProxy proxy{};
  return proxy;
}

torch::Tensor perceptual_distance(const torch::Tensor& x, const torch::Tensor& x_hat) {
  return default_perceptual()->forward(x, x_hat).mean();
}

double distortion_scale(Metric metric) {
  switch (metric) {
    case Metric::Psnr: return 0.01;
    case Metric::MsSsim: return 25.0;
    case Metric::Perceptual: return 2.5;
  }
  return 0.0;
}

torch::Tensor scaled_distortion(Metric metric, const torch::Tensor& x, const torch::Tensor& x_hat) {
  switch (metric) {
    case Metric::Psnr: return distortion_scale(metric) * mse255(x, x_hat);
    case Metric::MsSsim: return distortion_scale(metric) * (1.0 - ms_ssim(x, x_hat));
    case Metric::Perceptual: return distortion_scale(metric) * perceptual_distance(x, x_hat);
  }
  throw ConfigError("scaled_distortion: unknown metric");
}

torch::Tensor combine_loss(const torch::Tensor& rate_bpp, const torch::Tensor& d_a,
                           const torch::Tensor& d_b, double lambda, double rate_weight) {
  return rate_weight * rate_bpp + lambda * d_a + (1.0 - lambda) * d_b;
}

LossBreakdown rd_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                      const torch::Tensor& rate_bpp, double lambda, double rate_weight,
                      const MetricPair& pair) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("rd_loss: lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
  pair.validate();
  LossBreakdown out;
  out.rate_bpp = rate_bpp;
  out.d_a = scaled_distortion(pair.a, x, x_hat);
  out.d_b = scaled_distortion(pair.b, x, x_hat);
  out.lambda = lambda;
  out.rate_weight = rate_weight;
  out.total = combine_loss(rate_bpp, out.d_a, out.d_b, lambda, rate_weight);
  return out;
}

}  // namespace pvqc::obj
