// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/codec.hpp"
#include "pvqc/objectives.hpp"
#include "pvqc/tensor_archive.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace pvqc::train {

enum class Stage { Pretrain, Joint, SingleMetric };

std::string to_string(Stage s);
Stage parse_stage(std::string_view text);

/// Everything that determines a training run.  Text form: one "key = value"
/// per line, '#' starts a comment.  Keys:
///   stage            pretrain | joint | single_metric
///   rate_index       0..3
///   pair             <a>_<b>, e.g. perceptual_psnr (joint)
///   metric           psnr | msssim | perceptual (single_metric)
///   w_mse            weight of the added PSNR term for single_metric perceptual
///   steps, batch_size, patch_size, image_size, corpus_size
///   learning_rate, lr_final, grad_clip, seed
///   image_dir        optional folder of PNGs mixed into the corpus
///   base_checkpoint  pretrained weights for stage joint
///   log_path         CSV training log (appended)
///   checkpoint_path, checkpoint_every
///   preset           toy | full (codec architecture, applied first)
///   variant, mechanism, codec.<key>   codec configuration overrides
struct TrainConfig {
  Stage stage = Stage::Pretrain;
  int rate_index = 0;
  obj::MetricPair pair{};
  obj::Metric metric = obj::Metric::Psnr;
  double w_mse = 1.0;
  CodecConfig codec = CodecConfig::toy();
  int64_t steps = 2000;
  int64_t batch_size = 8;
  int64_t patch_size = 64;
  int64_t image_size = 96;
  int64_t corpus_size = 256;
  double learning_rate = 1e-4;
  double lr_final = 1e-5;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  std::string image_dir;
  std::string base_checkpoint;
  std::string log_path;
  std::string checkpoint_path;
  int64_t checkpoint_every = 0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
  /// Applies key=value pairs on top of `base`.
  static TrainConfig from_map(const std::map<std::string, std::string>& kv, TrainConfig base);
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  static TrainConfig parse(const std::string& text, TrainConfig base);
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path, TrainConfig base);
  static TrainConfig load(const std::string& path);
};

/// U(0,1) trade-off draw.
double sample_lambda(std::mt19937_64& rng);

/// Cosine decay from learning_rate at step 0 to lr_final at `steps`.
double learning_rate_at(const TrainConfig& cfg, int64_t step);

/// Structured procedural RGB image [3, size, size] in [0,1]: smooth
/// gradients, oriented sinusoidal textures, noise and flat shapes.
torch::Tensor procedural_image(std::uint64_t seed, int64_t size);

/// Deterministic collection of training images.
class ToyCorpus {
public:
  ToyCorpus(std::uint64_t seed, int64_t count, int64_t size);
  /// Adds external images ([3, H, W] in [0,1], at least patch-sized).
  void add(torch::Tensor image);

  int64_t size() const { return static_cast<int64_t>(images_.size()); }
  const torch::Tensor& image(int64_t i) const { return images_.at(static_cast<size_t>(i)); }
  /// Random crops with random horizontal flips, [batch, 3, patch, patch].
  torch::Tensor sample(std::mt19937_64& rng, int64_t batch, int64_t patch) const;

private:
  std::vector<torch::Tensor> images_;
};

/// Held-out evaluation patches: disjoint seed range from training.
torch::Tensor heldout_patches(std::uint64_t seed, int64_t count, int64_t size);

/// Adam with bias correction and serializable moments.
class Adam {
public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step(double lr);
  int64_t steps_taken() const { return t_; }

  void save_to(TensorArchive& archive) const;
  void load_from(const TensorArchive& archive);

private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::vector<torch::Tensor> m_, v_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

/// Clips the global L2 norm of the gradients; returns the norm before
/// clipping.
double clip_grad_norm(const std::vector<torch::Tensor>& params, double max_norm);

struct StepLog {
  int64_t step = 0;
  double loss = 0.0;
  double rate = 0.0;
  double d_a = 0.0;
  double d_b = 0.0;
  double lambda = 0.0;
};

/// Objective of one stage evaluated on a batch.
struct StageLoss {
  torch::Tensor total;
  torch::Tensor rate;
  torch::Tensor d_a;
  torch::Tensor d_b;
};

/// pretrain: R*bpp + d_PSNR.  joint: R*bpp + lambda d_A + (1-lambda) d_B.
/// single_metric: R*bpp + d_metric (+ w_mse d_PSNR for perceptual).
StageLoss stage_loss(const TrainConfig& cfg, const torch::Tensor& x, const TrainOutput& out,
                     double lambda);

class Trainer {
public:
  /// Builds a freshly initialised model (seeded by cfg.seed).  For stage
  /// joint, weights named in cfg.base_checkpoint are loaded when set.
  explicit Trainer(TrainConfig cfg);

  /// Continues from a checkpoint written by save_checkpoint().
  static Trainer resume(const std::string& path);

  /// Copies every same-named tensor of `archive` into the model; returns how
  /// many model tensors were left at their initial values.
  size_t load_base(const TensorArchive& archive);

  StepLog step();
  /// Runs until cfg.steps (or `until` when given), logging and
  /// checkpointing as configured.  The callback sees every step.
  std::vector<StepLog> run(std::optional<int64_t> until = std::nullopt,
                           const std::function<void(const StepLog&)>& on_step = {});

  void save_checkpoint(const std::string& path) const;
  TensorArchive checkpoint() const;

  Codec& codec() { return codec_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t current_step() const { return step_; }
  /// Gradient L2 norm of each top-level module after the last step.
  const std::map<std::string, double>& last_grad_norms() const { return grad_norms_; }

private:
  Trainer(TrainConfig cfg, bool fresh);
  void append_log(const StepLog& entry) const;

  TrainConfig cfg_;
  Codec codec_{nullptr};
  ToyCorpus corpus_;
  std::unique_ptr<Adam> adam_;
  std::mt19937_64 rng_;
  torch::Generator noise_gen_;
  int64_t step_ = 0;
  std::map<std::string, double> grad_norms_;
};

/// Stage metadata key carried by every checkpoint ("train.metric" names the
/// objective: psnr for pretrain, the pair for joint, the metric for
/// single_metric).
std::string checkpoint_metric_tag(const TrainConfig& cfg);

}  // namespace pvqc::train
