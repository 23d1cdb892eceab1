// SPDX-License-Identifier: Apache-2.0
#include "pvqc/entropy_models.hpp"

#include "pvqc/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace pvqc::entropy {

torch::Tensor quantize(const torch::Tensor& y, const torch::Tensor& mean, QuantMode mode,
                       std::optional<torch::Generator> gen) {
  switch (mode) {
    case QuantMode::Noise: {
      auto u = gen ? torch::rand(y.sizes(), *gen, y.options()) : torch::rand_like(y);
      return y + (u - 0.5);
    }
    case QuantMode::RoundSte: {
      auto centered = mean.defined() ? y - mean : y;
      auto rounded = centered + (torch::round(centered) - centered).detach();
      return mean.defined() ? rounded + mean : rounded;
    }
    case QuantMode::Hard: {
      torch::NoGradGuard no_grad;
      auto centered = mean.defined() ? y - mean : y;
      return torch::round(centered).to(torch::kInt32);
    }
  }
  throw ConfigError("quantize: unknown mode");
}

namespace {
torch::Tensor standard_cdf(const torch::Tensor& x) {
  return 0.5 * torch::erfc(x * (-1.0 / std::numbers::sqrt2));
}
double standard_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
}  // namespace

torch::Tensor likelihood_gaussian(const torch::Tensor& value, const torch::Tensor& mean,
                                  const torch::Tensor& scale) {
  // Evaluate on the lower tail for accuracy far from the mean.
  auto distance = torch::abs(value - mean);
  auto upper = standard_cdf((0.5 - distance) / scale);
  auto lower = standard_cdf((-0.5 - distance) / scale);
  return torch::clamp_min(upper - lower, kProbabilityFloor);
}

double gaussian_bin_probability(double value, double mean, double scale) {
  const double distance = std::abs(value - mean);
  return standard_cdf((0.5 - distance) / scale) - standard_cdf((-0.5 - distance) / scale);
}

torch::Tensor estimate_rate(const torch::Tensor& probabilities) {
  return -torch::log2(probabilities).sum();
}

double estimate_rate(std::span<const double> probabilities) {
  double bits = 0.0;
  for (double p : probabilities) bits -= std::log2(p);
  return bits;
}

FactorizedPriorImpl::FactorizedPriorImpl(int64_t channels, std::vector<int64_t> filters,
                                         double init_scale)
    : channels_(channels) {
  if (channels < 1) throw ConfigError("FactorizedPrior: channels must be >= 1");
  std::vector<int64_t> dims{1};
  dims.insert(dims.end(), filters.begin(), filters.end());
  dims.push_back(1);
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(dims.size() - 1));
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(dims[i + 1])));
    auto name = std::to_string(i);
    matrices_.push_back(register_parameter(
        "matrix" + name, torch::full({channels, dims[i + 1], dims[i]}, init)));
    biases_.push_back(register_parameter(
        "bias" + name, torch::rand({channels, dims[i + 1], 1}) - 0.5));
    if (i + 2 < dims.size()) {
      factors_.push_back(
          register_parameter("factor" + name, torch::zeros({channels, dims[i + 1], 1})));
    }
  }
}

torch::Tensor FactorizedPriorImpl::logits_cumulative(const torch::Tensor& x) const {
  auto logits = x;
  for (size_t i = 0; i < matrices_.size(); ++i) {
    auto matrix = torch::softplus(matrices_[i].to(x.dtype()));
    logits = torch::matmul(matrix, logits) + biases_[i].to(x.dtype());
    if (i < factors_.size()) {
      logits = logits + torch::tanh(factors_[i].to(x.dtype())) * torch::tanh(logits);
    }
  }
  return logits;
}

torch::Tensor FactorizedPriorImpl::cdf(const torch::Tensor& x) const {
  return torch::sigmoid(logits_cumulative(x.unsqueeze(1))).squeeze(1);
}

torch::Tensor FactorizedPriorImpl::likelihood(const torch::Tensor& z) const {
  if (z.dim() != 4 || z.size(1) != channels_) {
    throw ShapeError("FactorizedPrior: expected [B, " + std::to_string(channels_) + ", H, W]");
  }
  const auto sizes = z.sizes().vec();
  auto values = z.permute({1, 0, 2, 3}).reshape({channels_, 1, -1});
  auto lower = logits_cumulative(values - 0.5);
  auto upper = logits_cumulative(values + 0.5);
  // Subtract on whichever tail is more accurate.
  auto sign = -torch::sign(lower + upper).detach();
  auto p = torch::abs(torch::sigmoid(sign * upper) - torch::sigmoid(sign * lower));
  p = torch::clamp_min(p, kProbabilityFloor);
  return p.reshape({channels_, sizes[0], sizes[2], sizes[3]}).permute({1, 0, 2, 3});
}

std::vector<CdfTable> FactorizedPriorImpl::build_tables() const {
  torch::NoGradGuard no_grad;
  const int64_t n = 2 * kMaxSupport + 2;  // edges -L-0.5 .. L+0.5
  auto edges = torch::arange(n, torch::kDouble) - (kMaxSupport + 0.5);
  auto cdf_values = cdf(edges.unsqueeze(0).expand({channels_, n}).contiguous()).contiguous();
  auto acc = cdf_values.accessor<double, 2>();

  std::vector<CdfTable> tables;
  tables.reserve(static_cast<size_t>(channels_));
  for (int64_t c = 0; c < channels_; ++c) {
    // Value v has bin edges acc[c][v + L] and acc[c][v + L + 1].
    auto lower_edge = [&](int32_t v) { return acc[c][v + kMaxSupport]; };
    auto upper_edge = [&](int32_t v) { return acc[c][v + kMaxSupport + 1]; };
    int32_t lo = -kMaxSupport, hi = kMaxSupport;
    while (lo < hi && upper_edge(lo) < kTailMass / 2) ++lo;
    while (hi > lo && lower_edge(hi) > 1.0 - kTailMass / 2) --hi;
    std::vector<double> pmf;
    pmf.reserve(static_cast<size_t>(hi - lo + 1));
    for (int32_t v = lo; v <= hi; ++v) pmf.push_back(upper_edge(v) - lower_edge(v));
    const double tail = std::max(0.0, lower_edge(lo) + (1.0 - upper_edge(hi)));
    tables.push_back(quantize_pmf(pmf, tail, lo));
  }
  return tables;
}

std::vector<double> GaussianConditionalTables::default_scales() {
  constexpr int kLevels = 64;
  const double lo = std::log(0.11), hi = std::log(256.0);
  std::vector<double> scales(kLevels);
  for (int i = 0; i < kLevels; ++i) {
    scales[i] = std::exp(lo + (hi - lo) * i / (kLevels - 1));
  }
  return scales;
}

GaussianConditionalTables::GaussianConditionalTables(std::vector<double> scales)
    : scales_(std::move(scales)) {
  if (scales_.empty() || !std::is_sorted(scales_.begin(), scales_.end())) {
    throw ConfigError("Gaussian scale table must be non-empty and ascending");
  }
  // z such that the two-sided tail beyond z * sigma is kTailMass.
  const double tail_z = 6.109410204869;
  for (double s : scales_) {
    scales_f_.push_back(static_cast<float>(s));
    const auto support = static_cast<int32_t>(
        std::clamp(std::ceil(tail_z * s), 1.0, static_cast<double>(kMaxSupport)));
    std::vector<double> pmf;
    pmf.reserve(static_cast<size_t>(2 * support + 1));
    for (int32_t v = -support; v <= support; ++v) pmf.push_back(gaussian_bin_probability(v, 0.0, s));
    const double tail = 2.0 * standard_cdf((-support - 0.5) / s);
    tables_.push_back(quantize_pmf(pmf, tail, -support));
  }
}

std::int32_t GaussianConditionalTables::index_for(float sigma) const {
  auto it = std::lower_bound(scales_f_.begin(), scales_f_.end(), sigma);
  if (it == scales_f_.end()) --it;
  return static_cast<std::int32_t>(std::distance(scales_f_.begin(), it));
}

}  // namespace pvqc::entropy
