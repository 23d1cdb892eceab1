// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/bitstream.hpp"
#include "pvqc/codec.hpp"

#include <torch/torch.h>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pvqc::harness {

/// A codec restored from a checkpoint plus the metadata the harness needs.
struct LoadedModel {
  Codec codec{nullptr};
  int rate_index = 0;
  std::string metric;  ///< objective tag written at training time
};

/// Throws DataError when unreadable, ModelMismatchError when the archive is
/// not a codec checkpoint.
LoadedModel load_model(const std::string& checkpoint);

/// Single-line JSON record of a rate report.
std::string report_json(const entropy::RateReport& report, double lambda, int rate_index,
                        Variant variant, Mechanism mechanism);

/// Encodes a PNG with the checkpoint's model and writes the container.
entropy::RateReport encode_file(const std::string& image_path, const LoadedModel& model,
                                double lambda, const std::string& out_path);

/// Decodes a container to PNG.  The stream must come from a model of the
/// same variant, mechanism and rate index (ModelMismatchError otherwise).
void decode_file(const std::string& stream_path, const LoadedModel& model,
                 const std::string& out_path, std::optional<double> lambda_override = {});

struct EvalRecord {
  std::string image;
  double lambda = 0.0;
  int rate_index = 0;
  double bpp = 0.0;  ///< container bytes * 8 / (H * W)
  double psnr = 0.0;
  double ms_ssim = 0.0;
  double perceptual = 0.0;
  Variant variant = Variant::None;
  Mechanism mechanism = Mechanism::Prompt;
};

/// Full encode -> container -> decode round trip and metrics for one image
/// ([3, H, W] in [0,1]).
EvalRecord evaluate_image(const LoadedModel& model, const std::string& name,
                          const torch::Tensor& image, double lambda);

/// Per-(lambda, rate) arithmetic means.
struct Aggregate {
  double lambda = 0.0;
  int rate_index = 0;
  size_t count = 0;
  double bpp = 0.0, psnr = 0.0, ms_ssim = 0.0, perceptual = 0.0;
};

/// Min/max over lambda of each mean metric at one rate point: the adaptive
/// range of that model.
struct Envelope {
  int rate_index = 0;
  double bpp_min = 0.0, bpp_max = 0.0;
  double psnr_min = 0.0, psnr_max = 0.0;
  double ms_ssim_min = 0.0, ms_ssim_max = 0.0;
  double perceptual_min = 0.0, perceptual_max = 0.0;
};

/// Means are taken over records sorted by image name, so the result does
/// not depend on corpus order.
std::vector<Aggregate> aggregate(std::vector<EvalRecord> records);
std::vector<Envelope> envelopes(const std::vector<Aggregate>& aggregates);

inline const std::vector<double> kDefaultLambdas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

struct SweepOptions {
  std::vector<double> lambdas = kDefaultLambdas;
  std::vector<int> rates{0, 1, 2, 3};
  std::string out_dir;  ///< CSVs and SVG plots; nothing written when empty
};

struct SweepResult {
  std::vector<EvalRecord> records;
  std::vector<Aggregate> aggregates;
  std::vector<Envelope> envelopes;
  std::vector<std::string> warnings;
};

/// Evaluates every (image, lambda, rate).  `checkpoints` maps rate index to
/// checkpoint path; rates without one are skipped with a warning.
SweepResult sweep(const std::vector<std::string>& names, const std::vector<torch::Tensor>& images,
                  const std::map<int, std::string>& checkpoints, const SweepOptions& options);

/// CSV writers (first line is a schema tag starting with '#').
void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records);
void write_aggregates_csv(const std::string& path, const std::vector<Aggregate>& aggregates);
void write_envelopes_csv(const std::string& path, const std::vector<Envelope>& envelopes);
/// Metric-vs-bpp plot, one curve per lambda, envelope shaded.  metric is
/// "psnr", "msssim" or "perceptual".
void write_rd_svg(const std::string& path, const std::string& metric,
                  const std::vector<Aggregate>& aggregates);

/// Human-readable parameter counts per top-level module.
std::string summarize_model(const LoadedModel& model);

}  // namespace pvqc::harness
