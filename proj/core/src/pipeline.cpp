// SPDX-License-Identifier: Apache-2.0
#include "pvqc/pipeline.hpp"

#include "pvqc/error.hpp"

#include <limits>
#include <string>

namespace pvqc {
namespace {

std::vector<std::int32_t> to_vector(const torch::Tensor& codes) {
  auto flat = codes.to(torch::kInt32).contiguous().view(-1);
  return {flat.data_ptr<std::int32_t>(), flat.data_ptr<std::int32_t>() + flat.numel()};
}

/// Table index of every z element: its channel.
std::vector<std::int32_t> channel_indexes(int64_t channels, int64_t height, int64_t width) {
  std::vector<std::int32_t> idx(static_cast<size_t>(channels * height * width));
  for (size_t i = 0; i < idx.size(); ++i) {
    idx[i] = static_cast<std::int32_t>(static_cast<int64_t>(i) / (height * width));
  }
  return idx;
}

std::vector<std::int32_t> scale_indexes(const torch::Tensor& sigma) {
  auto flat = sigma.to(torch::kFloat).contiguous().view(-1);
  const auto& tables = gaussian_tables();
  std::vector<std::int32_t> idx(static_cast<size_t>(flat.numel()));
  const float* p = flat.data_ptr<float>();
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = tables.index_for(p[i]);
  return idx;
}

}  // namespace

const entropy::GaussianConditionalTables& gaussian_tables() {
  static const entropy::GaussianConditionalTables tables;
  return tables;
}

EncodeResult compress(Codec& codec, const torch::Tensor& image, double lambda, int rate_index) {
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  if (x.dim() != 4 || x.size(0) != 1 || x.size(1) != 3) {
    throw ShapeError("compress: expected one RGB image");
  }
  const int64_t height = x.size(2), width = x.size(3);
  if (height > std::numeric_limits<std::uint16_t>::max() ||
      width > std::numeric_limits<std::uint16_t>::max()) {
    throw ShapeError("compress: image larger than 65535 pixels per side");
  }
  if (rate_index < 0 || rate_index > 255) throw ConfigError("compress: rate index out of range");
  torch::NoGradGuard no_grad;
  const auto& cfg = codec->config();

  EncodeResult result;
  auto& header = result.stream.header;
  header.variant = cfg.variant;
  header.mechanism = cfg.mechanism;
  header.lambda_fixed = entropy::BitstreamHeader::fix_lambda(lambda);
  header.rate_index = static_cast<std::uint8_t>(rate_index);
  header.height = static_cast<std::uint16_t>(height);
  header.width = static_cast<std::uint16_t>(width);

  auto padded = CodecImpl::pad_input(x.to(torch::kFloat));
  header.pad_h = static_cast<std::uint8_t>(padded.size(2) - height);
  header.pad_w = static_cast<std::uint8_t>(padded.size(3) - width);

  auto y = codec->analyze(padded, lambda);
  auto z = codec->hyper_analyze(torch::round(y));
  const torch::Tensor none;
  auto z_codes = entropy::quantize(z, none, entropy::QuantMode::Hard);
  auto z_tables = codec->prior->build_tables();
  auto z_values = to_vector(z_codes);
  auto z_index = channel_indexes(z.size(1), z.size(2), z.size(3));
  result.stream.z_chunk = entropy::encode_symbols(z_values, z_index, z_tables);

  auto [mu, sigma] = codec->hyper_synthesize(z_codes.to(torch::kFloat));
  auto y_codes = entropy::quantize(y, mu, entropy::QuantMode::Hard);
  auto y_values = to_vector(y_codes);
  auto y_index = scale_indexes(sigma);
  result.stream.y_chunk = entropy::encode_symbols(y_values, y_index, gaussian_tables().tables());

  result.bytes = entropy::pack_bitstream(result.stream);
  auto& report = result.report;
  report.estimated_bits_z =
      entropy::estimate_rate(codec->prior->likelihood(z_codes.to(torch::kFloat))).item<double>();
  report.estimated_bits_y =
      entropy::estimate_rate(entropy::likelihood_gaussian(y_codes.to(torch::kFloat),
                                                          torch::zeros_like(sigma), sigma))
          .item<double>();
  report.actual_bits_z = result.stream.z_chunk.size() * 8;
  report.actual_bits_y = result.stream.y_chunk.size() * 8;
  report.file_bits = result.bytes.size() * 8;
  report.bpp = static_cast<double>(report.file_bits) / static_cast<double>(height * width);
  return result;
}

torch::Tensor decompress(Codec& codec, const entropy::Bitstream& stream,
                         std::optional<double> lambda_override) {
  const auto& cfg = codec->config();
  const auto& header = stream.header;
  if (header.variant != cfg.variant || header.mechanism != cfg.mechanism) {
    throw ModelMismatchError("bitstream was written by a " + to_string(header.variant) + "/" +
                             to_string(header.mechanism) + " model, checkpoint is " +
                             to_string(cfg.variant) + "/" + to_string(cfg.mechanism));
  }
  if (lambda_override && header.variant != Variant::DecoderSide) {
    throw ModelMismatchError(header.variant == Variant::BothSide
                                 ? "override unsupported for both-side"
                                 : "override unsupported for unconditioned streams");
  }
  const double lambda = lambda_override ? *lambda_override : header.lambda();
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda outside [0, 1]");
  if (header.height == 0 || header.width == 0) throw FormatError("bitstream: empty image");
  const int64_t padded_h = header.height + header.pad_h;
  const int64_t padded_w = header.width + header.pad_w;
  if (padded_h % CodecConfig::kStride || padded_w % CodecConfig::kStride) {
    throw FormatError("bitstream: padded size is not a multiple of 64");
  }

  torch::NoGradGuard no_grad;
  const int64_t zh = padded_h / 64, zw = padded_w / 64;
  auto z_index = channel_indexes(cfg.hyper_channels, zh, zw);
  auto z_values = entropy::decode_symbols(stream.z_chunk, z_index, codec->prior->build_tables());
  auto z_hat = torch::from_blob(z_values.data(), {1, cfg.hyper_channels, zh, zw}, torch::kInt32)
                   .to(torch::kFloat);

  auto [mu, sigma] = codec->hyper_synthesize(z_hat);
  auto y_values = entropy::decode_symbols(stream.y_chunk, scale_indexes(sigma),
                                          gaussian_tables().tables());
  auto y_codes = torch::from_blob(y_values.data(), mu.sizes(), torch::kInt32).to(torch::kFloat);
  auto x_hat = codec->synthesize(y_codes + mu, lambda);
  return x_hat.narrow(2, 0, header.height).narrow(3, 0, header.width).clamp(0.0, 1.0);
}

}  // namespace pvqc
