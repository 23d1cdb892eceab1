// SPDX-License-Identifier: Apache-2.0
#include "pvqc/codec.hpp"

#include "pvqc/error.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace pvqc {
namespace nn = torch::nn;
using entropy::QuantMode;

namespace {

constexpr int64_t kStages = 4;

torch::Tensor nhwc(const torch::Tensor& t) { return t.permute({0, 2, 3, 1}); }
torch::Tensor nchw(const torch::Tensor& t) { return t.permute({0, 3, 1, 2}).contiguous(); }

nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

nn::ConvTranspose2d upconv(int64_t in, int64_t out, int64_t kernel) {
  return nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, kernel)
                                 .stride(2)
                                 .padding(kernel / 2)
                                 .output_padding(1));
}

wt::StbConfig stb(const CodecConfig& cfg, size_t stage) {
  return {cfg.depths[stage], cfg.dims[stage], cfg.heads[stage], cfg.window, cfg.mlp_ratio};
}

std::string join(const std::vector<int64_t>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

int64_t to_int(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("codec config: '" + key + "' expects an integer, got '" + text + "'");
  }
}

double to_double(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const auto v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("codec config: '" + key + "' expects a number, got '" + text + "'");
  }
}

std::vector<int64_t> to_ints(const std::string& key, const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_int(key, item));
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
}

}  // namespace

CodecConfig CodecConfig::toy() { return CodecConfig{}; }

CodecConfig CodecConfig::full() {
  CodecConfig c;
  c.latent_channels = 192;
  c.hyper_channels = 128;
  c.dims = {128, 192, 256, 320};
  c.depths = {2, 2, 6, 2};
  c.heads = {4, 6, 8, 10};
  c.window = 8;
  c.hyper_dim = 192;
  c.hyper_heads = 6;
  c.cond_width = 128;
  return c;
}

void CodecConfig::validate() const {
  if (dims.size() != kStages || depths.size() != kStages || heads.size() != kStages) {
    throw ConfigError("codec config: dims, depths and heads need 4 entries each");
  }
  if (latent_channels < 1 || hyper_channels < 1 || hyper_dim < 1 || cond_width < 1) {
    throw ConfigError("codec config: channel counts must be positive");
  }
  if (!(sigma_min > 0.0)) throw ConfigError("codec config: sigma_min must be positive");
  for (size_t s = 0; s < kStages; ++s) stb(*this, s).validate();
  wt::StbConfig{hyper_depth, hyper_dim, hyper_heads, window, mlp_ratio}.validate();
}

std::map<std::string, std::string> CodecConfig::to_map() const {
  return {{"latent_channels", std::to_string(latent_channels)},
          {"hyper_channels", std::to_string(hyper_channels)},
          {"dims", join(dims)},
          {"depths", join(depths)},
          {"heads", join(heads)},
          {"window", std::to_string(window)},
          {"mlp_ratio", format_double(mlp_ratio)},
          {"hyper_dim", std::to_string(hyper_dim)},
          {"hyper_depth", std::to_string(hyper_depth)},
          {"hyper_heads", std::to_string(hyper_heads)},
          {"cond_width", std::to_string(cond_width)},
          {"sigma_min", format_double(sigma_min)},
          {"variant", to_string(variant)},
          {"mechanism", to_string(mechanism)}};
}

CodecConfig CodecConfig::from_map(const std::map<std::string, std::string>& kv) {
  CodecConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "latent_channels") c.latent_channels = to_int(key, value);
    else if (key == "hyper_channels") c.hyper_channels = to_int(key, value);
    else if (key == "dims") c.dims = to_ints(key, value);
    else if (key == "depths") c.depths = to_ints(key, value);
    else if (key == "heads") c.heads = to_ints(key, value);
    else if (key == "window") c.window = to_int(key, value);
    else if (key == "mlp_ratio") c.mlp_ratio = to_double(key, value);
    else if (key == "hyper_dim") c.hyper_dim = to_int(key, value);
    else if (key == "hyper_depth") c.hyper_depth = to_int(key, value);
    else if (key == "hyper_heads") c.hyper_heads = to_int(key, value);
    else if (key == "cond_width") c.cond_width = to_int(key, value);
    else if (key == "sigma_min") c.sigma_min = to_double(key, value);
    else if (key == "variant") c.variant = parse_variant(value);
    else if (key == "mechanism") c.mechanism = parse_mechanism(value);
    else throw ConfigError("codec config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

AnalysisTransformImpl::AnalysisTransformImpl(const CodecConfig& cfg) {
  downs = register_module("downs", nn::ModuleList());
  blocks = register_module("blocks", nn::ModuleList());
  for (size_t s = 0; s < kStages; ++s) {
    downs->push_back(s == 0 ? conv(3, cfg.dims[0], 5, 2) : conv(cfg.dims[s - 1], cfg.dims[s], 3, 2));
    blocks->push_back(wt::SwinBlock(stb(cfg, s)));
  }
  head = register_module("head", conv(cfg.dims.back(), cfg.latent_channels, 1, 1));
}

torch::Tensor AnalysisTransformImpl::forward(const torch::Tensor& x,
                                             cond::SideConditionerImpl* cond,
                                             const cond::SideContext* ctx, bool mask_prompts) {
  auto h = x;
  for (size_t s = 0; s < kStages; ++s) {
    h = downs[s]->as<nn::Conv2d>()->forward(h);
    auto bc = ctx ? ctx->block(s) : wt::BlockConditioning{};
    bc.mask_prompts = mask_prompts;
    auto out = nchw(blocks[s]->as<wt::SwinBlock>()->forward(nhwc(h), bc));
    h = cond ? cond->after_block(s, h, out, *ctx) : out;
  }
  return head(h);
}

SynthesisTransformImpl::SynthesisTransformImpl(const CodecConfig& cfg) {
  stem = register_module("stem", conv(cfg.latent_channels, cfg.dims.back(), 1, 1));
  blocks = register_module("blocks", nn::ModuleList());
  ups = register_module("ups", nn::ModuleList());
  for (size_t s = 0; s < kStages; ++s) {
    const size_t level = kStages - 1 - s;
    blocks->push_back(wt::SwinBlock(stb(cfg, level)));
    ups->push_back(level == 0 ? upconv(cfg.dims[0], 3, 5)
                              : upconv(cfg.dims[level], cfg.dims[level - 1], 3));
  }
}

torch::Tensor SynthesisTransformImpl::forward(const torch::Tensor& y_hat,
                                              cond::SideConditionerImpl* cond,
                                              const cond::SideContext* ctx, bool mask_prompts) {
  auto h = stem(y_hat);
  for (size_t s = 0; s < kStages; ++s) {
    auto bc = ctx ? ctx->block(s) : wt::BlockConditioning{};
    bc.mask_prompts = mask_prompts;
    auto out = nchw(blocks[s]->as<wt::SwinBlock>()->forward(nhwc(h), bc));
    if (cond) out = cond->after_block(s, h, out, *ctx);
    h = ups[s]->as<nn::ConvTranspose2d>()->forward(out);
  }
  return h;
}

HyperAnalysisImpl::HyperAnalysisImpl(const CodecConfig& cfg) {
  conv1 = register_module("conv1", conv(cfg.latent_channels, cfg.hyper_dim, 3, 1));
  block = register_module("block", wt::SwinBlock(wt::StbConfig{
                                       cfg.hyper_depth, cfg.hyper_dim, cfg.hyper_heads,
                                       cfg.window, cfg.mlp_ratio}));
  conv2 = register_module("conv2", conv(cfg.hyper_dim, cfg.hyper_dim, 5, 2));
  conv3 = register_module("conv3", conv(cfg.hyper_dim, cfg.hyper_channels, 5, 2));
}

torch::Tensor HyperAnalysisImpl::forward(const torch::Tensor& y) {
  auto h = torch::gelu(conv1(y));
  h = nchw(block(nhwc(h)));
  h = torch::gelu(conv2(h));
  return conv3(h);
}

HyperSynthesisImpl::HyperSynthesisImpl(const CodecConfig& cfg)
    : sigma_min_(cfg.sigma_min), latent_channels_(cfg.latent_channels) {
  up1 = register_module("up1", upconv(cfg.hyper_channels, cfg.hyper_dim, 5));
  up2 = register_module("up2", upconv(cfg.hyper_dim, cfg.hyper_dim, 5));
  block = register_module("block", wt::SwinBlock(wt::StbConfig{
                                       cfg.hyper_depth, cfg.hyper_dim, cfg.hyper_heads,
                                       cfg.window, cfg.mlp_ratio}));
  head = register_module("head", conv(cfg.hyper_dim, 2 * cfg.latent_channels, 1, 1));
}

std::pair<torch::Tensor, torch::Tensor> HyperSynthesisImpl::forward(const torch::Tensor& z_hat) {
  auto h = torch::gelu(up1(z_hat));
  h = torch::gelu(up2(h));
  h = nchw(block(nhwc(h)));
  auto params = head(h);
  auto mu = params.narrow(1, 0, latent_channels_);
  auto sigma = sigma_min_ + torch::softplus(params.narrow(1, latent_channels_, latent_channels_));
  return {mu, sigma};
}

CodecImpl::CodecImpl(CodecConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  analysis = register_module("analysis", AnalysisTransform(cfg_));
  synthesis = register_module("synthesis", SynthesisTransform(cfg_));
  hyper_analysis = register_module("hyper_analysis", HyperAnalysis(cfg_));
  hyper_synthesis = register_module("hyper_synthesis", HyperSynthesis(cfg_));
  prior = register_module("prior", entropy::FactorizedPrior(cfg_.hyper_channels));

  std::vector<cond::StageShape> enc_stages, dec_stages;
  for (size_t s = 0; s < kStages; ++s) {
    enc_stages.push_back({cfg_.dims[s], cfg_.depths[s]});
    dec_stages.push_back({cfg_.dims[kStages - 1 - s], cfg_.depths[kStages - 1 - s]});
  }
  if (conditions_encoder(cfg_.variant)) {
    enc_cond = register_module("enc_cond", cond::make_conditioner(cfg_.mechanism, cond::Side::Encoder,
                                                                  3, enc_stages, cfg_.cond_width));
  }
  if (conditions_decoder(cfg_.variant)) {
    dec_cond = register_module(
        "dec_cond", cond::make_conditioner(cfg_.mechanism, cond::Side::Decoder,
                                           cfg_.latent_channels, dec_stages, cfg_.cond_width));
  }
}

torch::Tensor CodecImpl::pad_input(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("codec input must be [B, 3, H, W]");
  const int64_t ph = (CodecConfig::kStride - x.size(2) % CodecConfig::kStride) % CodecConfig::kStride;
  const int64_t pw = (CodecConfig::kStride - x.size(3) % CodecConfig::kStride) % CodecConfig::kStride;
  if (ph == 0 && pw == 0) return x;
  return torch::nn::functional::pad(
      x, torch::nn::functional::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
}

torch::Tensor CodecImpl::analyze(const torch::Tensor& x, double lambda) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) % CodecConfig::kStride != 0 ||
      x.size(3) % CodecConfig::kStride != 0) {
    throw ShapeError("analyze: expected padded [B, 3, 64k, 64m] input");
  }
  if (!enc_cond) return analysis(x, nullptr, nullptr, mask_prompts);
  auto ctx = enc_cond->prepare(x, lambda);
  return analysis(x, enc_cond.get(), &ctx, mask_prompts);
}

torch::Tensor CodecImpl::synthesize(const torch::Tensor& y_hat, double lambda) {
  if (y_hat.dim() != 4 || y_hat.size(1) != cfg_.latent_channels) {
    throw ShapeError("synthesize: expected [B, " + std::to_string(cfg_.latent_channels) +
                     ", h, w] latent");
  }
  if (!dec_cond) return synthesis(y_hat, nullptr, nullptr, mask_prompts);
  auto ctx = dec_cond->prepare(y_hat, lambda);
  return synthesis(y_hat, dec_cond.get(), &ctx, mask_prompts);
}

torch::Tensor CodecImpl::hyper_analyze(const torch::Tensor& y) {
  if (y.dim() != 4 || y.size(1) != cfg_.latent_channels || y.size(2) % 4 || y.size(3) % 4) {
    throw ShapeError("hyper_analyze: latent must be [B, C_y, 4k, 4m]");
  }
  return hyper_analysis(y);
}

std::pair<torch::Tensor, torch::Tensor> CodecImpl::hyper_synthesize(const torch::Tensor& z_hat) {
  if (z_hat.dim() != 4 || z_hat.size(1) != cfg_.hyper_channels) {
    throw ShapeError("hyper_synthesize: expected [B, C_z, h, w]");
  }
  return hyper_synthesis(z_hat);
}

TrainOutput CodecImpl::forward_train(const torch::Tensor& x, double lambda, bool noise,
                                     std::optional<torch::Generator> gen) {
  check_lambda(lambda);
  const int64_t batch = x.size(0), height = x.size(2), width = x.size(3);
  TrainOutput out;
  out.y = analyze(pad_input(x), lambda);
  const torch::Tensor none;
  auto rate_view = [&](const torch::Tensor& t, const torch::Tensor& mean) {
    return noise ? entropy::quantize(t, none, QuantMode::Noise, gen)
                 : entropy::quantize(t, mean, QuantMode::RoundSte);
  };
  auto z = hyper_analyze(rate_view(out.y, none));
  auto z_tilde = rate_view(z, none);
  auto z_hat = entropy::quantize(z, none, QuantMode::RoundSte);
  std::tie(out.mu, out.sigma) = hyper_synthesize(z_hat);

  auto p_z = prior->likelihood(z_tilde);
  auto p_y = entropy::likelihood_gaussian(rate_view(out.y, out.mu), out.mu, out.sigma);
  out.bits_z = entropy::estimate_rate(p_z);
  out.bits_y = entropy::estimate_rate(p_y);
  out.rate_bpp = (out.bits_y + out.bits_z) / static_cast<double>(batch * height * width);

  auto y_hat = entropy::quantize(out.y, out.mu, QuantMode::RoundSte);
  out.x_hat = synthesize(y_hat, lambda).narrow(2, 0, height).narrow(3, 0, width);
  return out;
}

ParameterSummary CodecImpl::summary() const {
  ParameterSummary s;
  for (const auto& item : named_children()) {
    int64_t count = 0;
    for (const auto& p : item.value()->parameters()) count += p.numel();
    s.groups.emplace_back(item.key(), count);
    s.total += count;
    if (item.key() == "enc_cond" || item.key() == "dec_cond") s.conditioning += count;
  }
  return s;
}

void CodecImpl::save_to(TensorArchive& archive) const {
  for (const auto& [key, value] : cfg_.to_map()) archive.set_meta("codec." + key, value);
  for (const auto& p : named_parameters()) archive.put(p.key(), p.value().detach());
  for (const auto& b : named_buffers()) archive.put(b.key(), b.value());
}

std::vector<std::string> CodecImpl::load_matching(const TensorArchive& archive) {
  torch::NoGradGuard no_grad;
  std::vector<std::string> missing;
  auto copy = [&](const std::string& name, torch::Tensor& target) {
    if (!archive.contains(name)) {
      missing.push_back(name);
      return;
    }
    const auto& source = archive.tensor(name);
    if (source.sizes() != target.sizes()) {
      throw ModelMismatchError("checkpoint tensor '" + name + "' has an incompatible shape");
    }
    target.copy_(source);
  };
  for (auto& p : named_parameters()) copy(p.key(), p.value());
  for (auto& b : named_buffers()) copy(b.key(), b.value());
  return missing;
}

void CodecImpl::load_from(const TensorArchive& archive) {
  if (config_from_archive(archive) != cfg_) {
    throw ModelMismatchError("checkpoint codec configuration differs from the model");
  }
  auto missing = load_matching(archive);
  if (!missing.empty()) {
    throw ModelMismatchError("checkpoint lacks tensor '" + missing.front() + "'");
  }
}

CodecConfig config_from_archive(const TensorArchive& archive) {
  std::map<std::string, std::string> kv;
  const std::string prefix = "codec.";
  for (const auto& [key, value] : archive.metadata()) {
    if (key.rfind(prefix, 0) == 0) kv[key.substr(prefix.size())] = value;
  }
  if (kv.empty()) throw ModelMismatchError("archive carries no codec configuration");
  return CodecConfig::from_map(kv);
}

}  // namespace pvqc
