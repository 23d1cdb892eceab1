// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include "pvqc/error.hpp"
#include "pvqc/harness.hpp"
#include "pvqc/image_io.hpp"
#include "pvqc/tensor_archive.hpp"
#include "pvqc/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <ostream>

namespace pvqc::cli {
namespace {

struct Options {
  std::string config, checkpoint, input, out, base, resume, log;
  std::vector<std::string> checkpoints;
  std::vector<double> lambdas;
  std::vector<int> rates;
  std::string variant, mechanism;
  std::optional<std::uint64_t> seed;
  std::optional<int64_t> steps;
};

void check_model_flags(const harness::LoadedModel& model, const Options& o) {
  const auto& cfg = model.codec->config();
  if (!o.variant.empty() && parse_variant(o.variant) != cfg.variant) {
    throw ModelMismatchError("checkpoint is variant " + to_string(cfg.variant) + ", not " +
                             o.variant);
  }
  if (!o.mechanism.empty() && parse_mechanism(o.mechanism) != cfg.mechanism) {
    throw ModelMismatchError("checkpoint uses mechanism " + to_string(cfg.mechanism) +
                             ", not " + o.mechanism);
  }
  if (!o.rates.empty() && (o.rates.size() != 1 || o.rates.front() != model.rate_index)) {
    throw ModelMismatchError("checkpoint was trained for rate index " +
                             std::to_string(model.rate_index));
  }
}

double single_lambda(const Options& o) {
  if (o.lambdas.size() != 1) throw ConfigError("exactly one --lambda is required");
  return o.lambdas.front();
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  train::Trainer trainer = [&] {
    if (!o.resume.empty()) return train::Trainer::resume(o.resume);
    std::map<std::string, std::string> kv;
    if (!o.variant.empty()) kv["variant"] = o.variant;
    if (!o.mechanism.empty()) kv["mechanism"] = o.mechanism;
    if (!o.rates.empty()) kv["rate_index"] = std::to_string(o.rates.front());
    if (o.seed) kv["seed"] = std::to_string(*o.seed);
    if (o.steps) kv["steps"] = std::to_string(*o.steps);
    if (!o.out.empty()) kv["checkpoint_path"] = o.out;
    if (!o.base.empty()) kv["base_checkpoint"] = o.base;
    if (!o.log.empty()) kv["log_path"] = o.log;
    // Flags are appended as later lines so they win, and the file is only
    // validated once they are applied.
    std::string text;
    if (!o.config.empty()) {
      const auto bytes = read_file(o.config);
      text.assign(bytes.begin(), bytes.end());
    }
    for (const auto& [key, value] : kv) text += "\n" + key + " = " + value;
    return train::Trainer(train::TrainConfig::parse(text));
  }();
  const auto& cfg = trainer.config();
  if (cfg.checkpoint_path.empty()) throw ConfigError("train: --out (checkpoint path) is required");
  err << "training " << train::to_string(cfg.stage) << " " << train::checkpoint_metric_tag(cfg)
      << " variant=" << to_string(cfg.codec.variant) << " mechanism="
      << to_string(cfg.codec.mechanism) << " rate_index=" << cfg.rate_index << " from step "
      << trainer.current_step() << " to " << cfg.steps << "\n";
  const int64_t every = std::max<int64_t>(1, cfg.steps / 20);
  trainer.run(std::nullopt, [&](const train::StepLog& e) {
    if ((e.step + 1) % every == 0) {
      err << "step " << e.step + 1 << " loss " << e.loss << " bpp " << e.rate << "\n";
    }
  });
  out << "wrote " << cfg.checkpoint_path << "\n";
  return kSuccess;
}

int cmd_encode(const Options& o, std::ostream& out) {
  auto model = harness::load_model(o.checkpoint);
  check_model_flags(model, o);
  const double lambda = single_lambda(o);
  auto report = harness::encode_file(o.input, model, lambda, o.out);
  const auto& cfg = model.codec->config();
  out << harness::report_json(report, lambda, model.rate_index, cfg.variant, cfg.mechanism)
      << "\n";
  return kSuccess;
}

int cmd_decode(const Options& o) {
  auto model = harness::load_model(o.checkpoint);
  check_model_flags(model, o);
  std::optional<double> override_lambda;
  if (o.lambdas.size() > 1) throw ConfigError("decode takes at most one --lambda");
  if (!o.lambdas.empty()) override_lambda = o.lambdas.front();
  harness::decode_file(o.input, model, o.out, override_lambda);
  return kSuccess;
}

io::IngestResult load_inputs(const std::string& input, std::ostream& err) {
  io::IngestResult data;
  if (std::filesystem::is_directory(input)) {
    data = io::ingest_images(input);
  } else {
    data.images.push_back(io::read_png(input));
    data.names.push_back(std::filesystem::path(input).filename().string());
  }
  for (const auto& w : data.warnings) err << "warning: skipped " << w << "\n";
  if (!data.warnings.empty()) err << data.warnings.size() << " file(s) skipped\n";
  return data;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  auto model = harness::load_model(o.checkpoint);
  check_model_flags(model, o);
  auto data = load_inputs(o.input, err);
  const auto lambdas = o.lambdas.empty() ? harness::kDefaultLambdas : o.lambdas;
  std::vector<harness::EvalRecord> records;
  for (double lambda : lambdas) {
    for (size_t i = 0; i < data.images.size(); ++i) {
      records.push_back(harness::evaluate_image(model, data.names[i], data.images[i], lambda));
    }
  }
  if (!o.out.empty()) harness::write_records_csv(o.out, records);
  for (const auto& a : harness::aggregate(records)) {
    out << "lambda " << a.lambda << " bpp " << a.bpp << " psnr " << a.psnr << " ms_ssim "
        << a.ms_ssim << " perceptual " << a.perceptual << "\n";
  }
  return kSuccess;
}

int cmd_sweep(const Options& o, std::ostream& out, std::ostream& err) {
  auto data = load_inputs(o.input, err);
  std::map<int, std::string> by_rate;
  for (const auto& path : o.checkpoints) {
    auto model = harness::load_model(path);
    if (!by_rate.emplace(model.rate_index, path).second) {
      throw ConfigError("two checkpoints for rate index " + std::to_string(model.rate_index));
    }
  }
  harness::SweepOptions opts;
  if (!o.lambdas.empty()) opts.lambdas = o.lambdas;
  if (!o.rates.empty()) opts.rates = o.rates;
  opts.out_dir = o.out;
  auto result = harness::sweep(data.names, data.images, by_rate, opts);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";
  for (const auto& e : result.envelopes) {
    out << "rate " << e.rate_index << " bpp [" << e.bpp_min << ", " << e.bpp_max << "] psnr ["
        << e.psnr_min << ", " << e.psnr_max << "] ms_ssim [" << e.ms_ssim_min << ", "
        << e.ms_ssim_max << "] perceptual [" << e.perceptual_min << ", " << e.perceptual_max
        << "]\n";
  }
  out << result.records.size() << " records\n";
  return kSuccess;
}

int cmd_summarize(const Options& o, std::ostream& out) {
  out << harness::summarize_model(harness::load_model(o.checkpoint));
  return kSuccess;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pvqc: neural image codec with a selectable quality trade-off"};
  app.require_subcommand(1);
  Options o;

  auto lambda_flag = [&](CLI::App* c, const char* help) {
    c->add_option("--lambda", o.lambdas, help)->check(CLI::Range(0.0, 1.0));
  };
  auto rate_flag = [&](CLI::App* c) {
    c->add_option("--rate-index", o.rates, "rate point 0..3")->check(CLI::Range(0, 3));
  };
  auto model_flags = [&](CLI::App* c) {
    c->add_option("--variant", o.variant, "both | decoder | none")
        ->check(CLI::IsMember({"both", "decoder", "none"}));
    c->add_option("--mechanism", o.mechanism, "prompt | sft | beta")
        ->check(CLI::IsMember({"prompt", "sft", "beta"}));
  };

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", o.config, "key = value training config");
  train->add_option("--out", o.out, "checkpoint to write");
  train->add_option("--seed", o.seed, "random seed");
  train->add_option("--steps", o.steps, "number of optimisation steps");
  train->add_option("--base", o.base, "pretrained checkpoint for stage joint");
  train->add_option("--resume", o.resume, "continue a checkpointed run");
  train->add_option("--log", o.log, "CSV training log");
  model_flags(train);
  rate_flag(train);

  auto* encode = app.add_subcommand("encode", "compress a PNG");
  encode->add_option("--checkpoint", o.checkpoint)->required();
  encode->add_option("--input", o.input, "PNG image")->required();
  encode->add_option("--out", o.out, "bitstream file")->required();
  lambda_flag(encode, "quality trade-off in [0,1]");
  encode->get_option("--lambda")->required();
  model_flags(encode);
  rate_flag(encode);

  auto* decode = app.add_subcommand("decode", "decompress to PNG");
  decode->add_option("--checkpoint", o.checkpoint)->required();
  decode->add_option("--input", o.input, "bitstream file")->required();
  decode->add_option("--out", o.out, "PNG to write")->required();
  lambda_flag(decode, "override the header lambda (decoder-side streams only)");
  model_flags(decode);
  rate_flag(decode);

  auto* eval = app.add_subcommand("eval", "evaluate one checkpoint on images");
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--input", o.input, "PNG file or directory")->required();
  eval->add_option("--out", o.out, "records CSV");
  lambda_flag(eval, "lambda values (default 0,0.2,...,1)");
  model_flags(eval);
  rate_flag(eval);

  auto* sweep = app.add_subcommand("sweep", "lambda x rate sweep with plots");
  sweep->add_option("--checkpoint", o.checkpoints, "one checkpoint per rate point")->required();
  sweep->add_option("--input", o.input, "PNG file or directory")->required();
  sweep->add_option("--out", o.out, "output directory")->required();
  lambda_flag(sweep, "lambda grid (default 0,0.2,...,1)");
  rate_flag(sweep);

  auto* summarize = app.add_subcommand("summarize", "parameter counts per module");
  summarize->add_option("--checkpoint", o.checkpoint)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*train) return cmd_train(o, out, err);
    if (*encode) return cmd_encode(o, out);
    if (*decode) return cmd_decode(o);
    if (*eval) return cmd_eval(o, out, err);
    if (*sweep) return cmd_sweep(o, out, err);
    if (*summarize) return cmd_summarize(o, out);
  } catch (const ModelMismatchError& e) {
    err << "error: " << e.what() << "\n";
    return kMismatch;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace pvqc::cli
