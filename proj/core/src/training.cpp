// SPDX-License-Identifier: Apache-2.0
#include "pvqc/training.hpp"

#include "pvqc/error.hpp"
#include "pvqc/image_io.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pvqc::train {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects an integer, got '" + text + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used == text.size() && text.find('-') == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + text + "'");
}

double to_double(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const auto v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + text + "'");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// splitmix64 finaliser; decorrelates (seed, index, domain) triples.
std::uint64_t mix(std::uint64_t seed, std::uint64_t index, std::uint64_t domain) {
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index * 0xBF58476D1CE4E5B9ull + domain;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kTrainDomain = 1;
constexpr std::uint64_t kHeldoutDomain = 2;

double group_grad_norm(const torch::nn::Module& m) {
  double sq = 0.0;
  for (const auto& p : m.parameters()) {
    if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
  }
  return std::sqrt(sq);
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Joint: return "joint";
    case Stage::SingleMetric: return "single_metric";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  if (text == "pretrain") return Stage::Pretrain;
  if (text == "joint") return Stage::Joint;
  if (text == "single_metric") return Stage::SingleMetric;
  throw ConfigError("unknown stage '" + std::string(text) +
                    "' (expected pretrain|joint|single_metric)");
}

void TrainConfig::validate() const {
  codec.validate();
  obj::rate_weight(rate_index);
  if (steps < 0) throw ConfigError("config: steps must be >= 0");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (patch_size < 16 || patch_size > image_size) {
    throw ConfigError("config: patch_size must lie in [16, image_size]");
  }
  if (corpus_size < 0 || (corpus_size == 0 && image_dir.empty())) {
    throw ConfigError("config: empty training corpus");
  }
  if (!(learning_rate > 0.0) || lr_final < 0.0) throw ConfigError("config: bad learning rate");
  if (grad_clip < 0.0) throw ConfigError("config: grad_clip must be >= 0 (0 disables)");
  if (w_mse < 0.0) throw ConfigError("config: w_mse must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("config: checkpoint_every must be >= 0");
  if (stage == Stage::Joint) {
    pair.validate();
    if (codec.variant == Variant::None) {
      throw ConfigError("config: stage joint needs variant both or decoder");
    }
  } else if (codec.variant != Variant::None) {
    throw ConfigError("config: stage " + to_string(stage) +
                      " trains the unconditioned codec; set variant = none");
  }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  std::map<std::string, std::string> kv{
      {"stage", to_string(stage)},
      {"rate_index", std::to_string(rate_index)},
      {"pair", pair.name()},
      {"metric", obj::to_string(metric)},
      {"w_mse", format_double(w_mse)},
      {"steps", std::to_string(steps)},
      {"batch_size", std::to_string(batch_size)},
      {"patch_size", std::to_string(patch_size)},
      {"image_size", std::to_string(image_size)},
      {"corpus_size", std::to_string(corpus_size)},
      {"learning_rate", format_double(learning_rate)},
      {"lr_final", format_double(lr_final)},
      {"grad_clip", format_double(grad_clip)},
      {"seed", std::to_string(seed)},
      {"image_dir", image_dir},
      {"base_checkpoint", base_checkpoint},
      {"log_path", log_path},
      {"checkpoint_path", checkpoint_path},
      {"checkpoint_every", std::to_string(checkpoint_every)},
  };
  for (const auto& [k, v] : codec.to_map()) kv["codec." + k] = v;
  return kv;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_map()) out += k + " = " + v + "\n";
  return out;
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv,
                                  TrainConfig base) {
  TrainConfig c = std::move(base);
  std::map<std::string, std::string> codec_kv;
  if (auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "toy") c.codec = CodecConfig::toy();
    else if (it->second == "full") c.codec = CodecConfig::full();
    else throw ConfigError("config: unknown preset '" + it->second + "' (expected toy|full)");
  }
  for (const auto& [key, value] : kv) {
    if (key == "preset") continue;
    if (key == "stage") c.stage = parse_stage(value);
    else if (key == "rate_index") c.rate_index = static_cast<int>(to_int(key, value));
    else if (key == "pair") c.pair = obj::MetricPair::parse(value);
    else if (key == "metric") c.metric = obj::parse_metric(value);
    else if (key == "w_mse") c.w_mse = to_double(key, value);
    else if (key == "steps") c.steps = to_int(key, value);
    else if (key == "batch_size") c.batch_size = to_int(key, value);
    else if (key == "patch_size") c.patch_size = to_int(key, value);
    else if (key == "image_size") c.image_size = to_int(key, value);
    else if (key == "corpus_size") c.corpus_size = to_int(key, value);
    else if (key == "learning_rate") c.learning_rate = to_double(key, value);
    else if (key == "lr_final") c.lr_final = to_double(key, value);
    else if (key == "grad_clip") c.grad_clip = to_double(key, value);
    else if (key == "seed") c.seed = to_uint(key, value);
    else if (key == "image_dir") c.image_dir = value;
    else if (key == "base_checkpoint") c.base_checkpoint = value;
    else if (key == "log_path") c.log_path = value;
    else if (key == "checkpoint_path") c.checkpoint_path = value;
    else if (key == "checkpoint_every") c.checkpoint_every = to_int(key, value);
    else if (key == "variant" || key == "mechanism") codec_kv[key] = value;
    else if (key.rfind("codec.", 0) == 0) codec_kv[key.substr(6)] = value;
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  if (!codec_kv.empty()) {
    auto merged = c.codec.to_map();
    for (const auto& [k, v] : codec_kv) merged[k] = v;
    c.codec = CodecConfig::from_map(merged);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::parse(const std::string& text, TrainConfig base) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return from_map(kv, std::move(base));
}

TrainConfig TrainConfig::load(const std::string& path, TrainConfig base) {
  const auto bytes = read_file(path);
  return parse(std::string(bytes.begin(), bytes.end()), std::move(base));
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  return from_map(kv, TrainConfig{});
}

TrainConfig TrainConfig::parse(const std::string& text) { return parse(text, TrainConfig{}); }

TrainConfig TrainConfig::load(const std::string& path) { return load(path, TrainConfig{}); }

double sample_lambda(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double learning_rate_at(const TrainConfig& cfg, int64_t step) {
  if (cfg.steps <= 0) return cfg.learning_rate;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(cfg.steps), 0.0, 1.0);
  return cfg.lr_final +
         0.5 * (cfg.learning_rate - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

torch::Tensor procedural_image(std::uint64_t seed, int64_t size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto color = [&] { return torch::tensor({u(rng), u(rng), u(rng)}).view({3, 1, 1}); };
  auto coords = torch::linspace(0.0, 1.0, size);
  auto yy = coords.view({1, size, 1}).expand({1, size, size});
  auto xx = coords.view({1, 1, size}).expand({1, size, size});

  // Smooth two-colour gradient along a random direction.
  const double angle = 2.0 * std::numbers::pi * u(rng);
  auto t = (std::cos(angle) * xx + std::sin(angle) * yy);
  t = (t - t.min()) / (t.max() - t.min() + 1e-9);
  auto img = color() * (1.0 - t) + color() * t;

  // Oriented sinusoidal textures.
  const int textures = 1 + static_cast<int>(u(rng) * 3.0);
  for (int k = 0; k < textures; ++k) {
    const double freq = 2.0 + 30.0 * u(rng);
    const double theta = std::numbers::pi * u(rng);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double amp = 0.05 + 0.2 * u(rng);
    auto wave = torch::sin(2.0 * std::numbers::pi * freq *
                               (std::cos(theta) * xx + std::sin(theta) * yy) +
                           phase);
    img = img + amp * wave * (color() - 0.5);
  }

  // Flat rectangles and discs with hard edges.
  const int shapes = 2 + static_cast<int>(u(rng) * 5.0);
  for (int k = 0; k < shapes; ++k) {
    const double cx = u(rng), cy = u(rng), r = 0.05 + 0.25 * u(rng);
    torch::Tensor mask;
    if (u(rng) < 0.5) {
      mask = ((xx - cx).abs() < r) & ((yy - cy).abs() < r * (0.5 + u(rng)));
    } else {
      mask = ((xx - cx).pow(2) + (yy - cy).pow(2)) < r * r;
    }
    img = torch::where(mask, color().expand({3, size, size}), img);
  }

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed ^ 0xA5A5A5A5ull);
  img = img + 0.02 * u(rng) * torch::randn({3, size, size}, gen);
  return img.clamp(0.0, 1.0).contiguous();
}

ToyCorpus::ToyCorpus(std::uint64_t seed, int64_t count, int64_t size) {
  images_.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    images_.push_back(procedural_image(mix(seed, static_cast<std::uint64_t>(i), kTrainDomain), size));
  }
}

void ToyCorpus::add(torch::Tensor image) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("corpus images must be [3, H, W]");
  images_.push_back(std::move(image));
}

torch::Tensor ToyCorpus::sample(std::mt19937_64& rng, int64_t batch, int64_t patch) const {
  if (images_.empty()) throw DataError("training corpus is empty");
  std::vector<torch::Tensor> crops;
  crops.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    const auto& img =
        images_[std::uniform_int_distribution<size_t>(0, images_.size() - 1)(rng)];
    if (img.size(1) < patch || img.size(2) < patch) {
      throw DataError("corpus image smaller than the training patch");
    }
    const auto top = std::uniform_int_distribution<int64_t>(0, img.size(1) - patch)(rng);
    const auto left = std::uniform_int_distribution<int64_t>(0, img.size(2) - patch)(rng);
    auto crop = img.narrow(1, top, patch).narrow(2, left, patch);
    if (rng() & 1u) crop = crop.flip({2});
    crops.push_back(crop);
  }
  return torch::stack(crops).contiguous();
}

torch::Tensor heldout_patches(std::uint64_t seed, int64_t count, int64_t size) {
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(procedural_image(mix(seed, static_cast<std::uint64_t>(i), kHeldoutDomain), size));
  }
  return torch::stack(out);
}

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
}

void Adam::step(double lr) {
  torch::NoGradGuard no_grad;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
    v_[i].mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    auto denom = (v_[i] / c2).sqrt_().add_(eps_);
    p.addcdiv_(m_[i], denom, -lr / c1);
  }
}

void Adam::save_to(TensorArchive& archive) const {
  archive.set_meta("optim.t", std::to_string(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    archive.put("optim.m." + params_[i].first, m_[i]);
    archive.put("optim.v." + params_[i].first, v_[i]);
  }
}

void Adam::load_from(const TensorArchive& archive) {
  torch::NoGradGuard no_grad;
  const auto t = archive.meta("optim.t");
  if (!t) throw ModelMismatchError("checkpoint has no optimizer state");
  t_ = to_int("optim.t", *t);
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& m = archive.tensor("optim.m." + params_[i].first);
    const auto& v = archive.tensor("optim.v." + params_[i].first);
    if (m.sizes() != m_[i].sizes() || v.sizes() != v_[i].sizes()) {
      throw ModelMismatchError("optimizer state shape mismatch for " + params_[i].first);
    }
    m_[i].copy_(m);
    v_[i].copy_(v);
  }
}

double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm) {
  torch::NoGradGuard no_grad;
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (const auto& p : params) {
      if (p.grad().defined()) p.grad().mul_(scale);
    }
  }
  return norm;
}

StageLoss stage_loss(const TrainConfig& cfg, const torch::Tensor& x, const TrainOutput& out,
                     double lambda) {
  const double r = obj::rate_weight(cfg.rate_index);
  StageLoss loss;
  loss.rate = out.rate_bpp;
  switch (cfg.stage) {
    case Stage::Pretrain:
      loss.d_a = obj::scaled_distortion(obj::Metric::Psnr, x, out.x_hat);
      loss.d_b = torch::zeros_like(loss.d_a);
      loss.total = r * out.rate_bpp + loss.d_a;
      break;
    case Stage::Joint: {
      auto lb = obj::rd_loss(x, out.x_hat, out.rate_bpp, lambda, r, cfg.pair);
      loss.d_a = lb.d_a;
      loss.d_b = lb.d_b;
      loss.total = lb.total;
      break;
    }
    case Stage::SingleMetric:
      loss.d_a = obj::scaled_distortion(cfg.metric, x, out.x_hat);
      loss.d_b = cfg.metric == obj::Metric::Perceptual
                     ? cfg.w_mse * obj::scaled_distortion(obj::Metric::Psnr, x, out.x_hat)
                     : torch::zeros_like(loss.d_a);
      loss.total = r * out.rate_bpp + loss.d_a + loss.d_b;
      break;
  }
  return loss;
}

std::string checkpoint_metric_tag(const TrainConfig& cfg) {
  switch (cfg.stage) {
    case Stage::Pretrain: return "psnr";
    case Stage::Joint: return cfg.pair.name();
    case Stage::SingleMetric: return obj::to_string(cfg.metric);
  }
  return "?";
}

Trainer::Trainer(TrainConfig cfg) : Trainer(std::move(cfg), true) {}

Trainer::Trainer(TrainConfig cfg, bool fresh)
    : cfg_(std::move(cfg)),
      corpus_((cfg_.validate(), cfg_.seed), cfg_.corpus_size, cfg_.image_size),
      rng_(cfg_.seed),
      noise_gen_(at::make_generator<at::CPUGeneratorImpl>(mix(cfg_.seed, 0, 3))) {
  torch::manual_seed(cfg_.seed);
  codec_ = Codec(cfg_.codec);
  if (!cfg_.image_dir.empty()) {
    auto ingested = io::ingest_images(cfg_.image_dir);
    for (auto& img : ingested.images) {
      if (img.size(1) >= cfg_.patch_size && img.size(2) >= cfg_.patch_size) {
        corpus_.add(std::move(img));
      }
    }
  }
  if (fresh && cfg_.stage == Stage::Joint && !cfg_.base_checkpoint.empty()) {
    load_base(TensorArchive::read(cfg_.base_checkpoint));
  }
  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (const auto& p : codec_->named_parameters()) {
    if (p.value().requires_grad()) params.emplace_back(p.key(), p.value());
  }
  adam_ = std::make_unique<Adam>(std::move(params));
}

size_t Trainer::load_base(const TensorArchive& archive) {
  return codec_->load_matching(archive).size();
}

StepLog Trainer::step() {
  codec_->train();
  const double lr = learning_rate_at(cfg_, step_);
  auto x = corpus_.sample(rng_, cfg_.batch_size, cfg_.patch_size);
  const double lambda = cfg_.stage == Stage::Joint ? sample_lambda(rng_) : 1.0;
  auto out = codec_->forward_train(x, lambda, true, noise_gen_);
  auto loss = stage_loss(cfg_, x, out, lambda);

  StepLog entry;
  entry.step = step_;
  entry.loss = loss.total.item<double>();
  entry.rate = loss.rate.item<double>();
  entry.d_a = loss.d_a.item<double>();
  entry.d_b = loss.d_b.item<double>();
  entry.lambda = lambda;
  if (!std::isfinite(entry.loss)) {
    std::ostringstream os;
    os << "training diverged at step " << step_ << ": loss=" << entry.loss
       << " rate=" << entry.rate << " d_a=" << entry.d_a << " d_b=" << entry.d_b
       << " lambda=" << lambda << " lr=" << lr;
    throw NumericError(os.str());
  }

  adam_->zero_grad();
  loss.total.backward();
  grad_norms_.clear();
  for (const auto& child : codec_->named_children()) {
    grad_norms_[child.key()] = group_grad_norm(*child.value());
  }
  clip_grad_norm(codec_->parameters(), cfg_.grad_clip);
  adam_->step(lr);
  ++step_;
  return entry;
}

void Trainer::append_log(const StepLog& e) const {
  if (cfg_.log_path.empty()) return;
  const bool fresh = !std::filesystem::exists(cfg_.log_path) ||
                     std::filesystem::file_size(cfg_.log_path) == 0;
  std::ofstream out(cfg_.log_path, std::ios::app);
  if (!out) throw DataError("cannot append to " + cfg_.log_path);
  if (fresh) out << "step,loss,rate,d_a,d_b,lambda\n";
  out.precision(9);
  out << e.step << ',' << e.loss << ',' << e.rate << ',' << e.d_a << ',' << e.d_b << ','
      << e.lambda << '\n';
}

std::vector<StepLog> Trainer::run(std::optional<int64_t> until,
                                  const std::function<void(const StepLog&)>& on_step) {
  const int64_t target = until.value_or(cfg_.steps);
  std::vector<StepLog> logs;
  while (step_ < target) {
    logs.push_back(step());
    append_log(logs.back());
    if (on_step) on_step(logs.back());
    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() &&
        step_ % cfg_.checkpoint_every == 0) {
      save_checkpoint(cfg_.checkpoint_path);
    }
  }
  if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path);
  return logs;
}

TensorArchive Trainer::checkpoint() const {
  TensorArchive archive;
  codec_->save_to(archive);
  adam_->save_to(archive);
  archive.set_meta("train.config", cfg_.to_text());
  archive.set_meta("train.step", std::to_string(step_));
  archive.set_meta("train.metric", checkpoint_metric_tag(cfg_));
  archive.set_meta("train.stage", to_string(cfg_.stage));
  archive.set_meta("train.rate_index", std::to_string(cfg_.rate_index));
  std::ostringstream rng_state;
  rng_state << rng_;
  archive.set_meta("train.rng", rng_state.str());
  archive.put("rng.noise", noise_gen_.get_state());
  return archive;
}

void Trainer::save_checkpoint(const std::string& path) const { checkpoint().write(path); }

Trainer Trainer::resume(const std::string& path) {
  const auto archive = TensorArchive::read(path);
  const auto text = archive.meta("train.config");
  const auto step = archive.meta("train.step");
  const auto rng = archive.meta("train.rng");
  if (!text || !step || !rng) throw ModelMismatchError(path + ": not a training checkpoint");
  Trainer t(TrainConfig::parse(*text), false);
  t.codec_->load_from(archive);
  t.adam_->load_from(archive);
  t.step_ = to_int("train.step", *step);
  std::istringstream in(*rng);
  in >> t.rng_;
  t.noise_gen_.set_state(archive.tensor("rng.noise"));
  return t;
}

}  // namespace pvqc::train
