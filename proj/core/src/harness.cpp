// SPDX-License-Identifier: Apache-2.0
#include "pvqc/harness.hpp"

#include "pvqc/error.hpp"
#include "pvqc/image_io.hpp"
#include "pvqc/objectives.hpp"
#include "pvqc/pipeline.hpp"
#include "pvqc/tensor_archive.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

namespace pvqc::harness {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int precision = 9) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

double metric_of(const Aggregate& a, const std::string& metric) {
  if (metric == "psnr") return a.psnr;
  if (metric == "msssim") return a.ms_ssim;
  if (metric == "perceptual") return a.perceptual;
  throw ConfigError("unknown plot metric '" + metric + "'");
}

}  // namespace

LoadedModel load_model(const std::string& checkpoint) {
  const auto archive = TensorArchive::read(checkpoint);
  LoadedModel m;
  m.codec = Codec(config_from_archive(archive));
  m.codec->load_from(archive);
  m.codec->eval();
  if (auto r = archive.meta("train.rate_index")) m.rate_index = std::stoi(*r);
  if (auto tag = archive.meta("train.metric")) m.metric = *tag;
  return m;
}

std::string report_json(const entropy::RateReport& r, double lambda, int rate_index,
                        Variant variant, Mechanism mechanism) {
  nlohmann::ordered_json j;
  j["lambda"] = lambda;
  j["rate_index"] = rate_index;
  j["variant"] = to_string(variant);
  j["mechanism"] = to_string(mechanism);
  j["estimated_bits_y"] = r.estimated_bits_y;
  j["estimated_bits_z"] = r.estimated_bits_z;
  j["actual_bits_y"] = r.actual_bits_y;
  j["actual_bits_z"] = r.actual_bits_z;
  j["file_bits"] = r.file_bits;
  j["bpp"] = r.bpp;
  return j.dump();
}

entropy::RateReport encode_file(const std::string& image_path, const LoadedModel& model,
                                double lambda, const std::string& out_path) {
  auto image = io::read_png(image_path);
  auto codec = model.codec;
  auto result = compress(codec, image, lambda, model.rate_index);
  write_file_atomic(out_path, result.bytes);
  return result.report;
}

void decode_file(const std::string& stream_path, const LoadedModel& model,
                 const std::string& out_path, std::optional<double> lambda_override) {
  const auto bytes = read_file(stream_path);
  const auto stream = entropy::unpack_bitstream(bytes);
  if (stream.header.rate_index != model.rate_index) {
    throw ModelMismatchError("bitstream rate index " + std::to_string(stream.header.rate_index) +
                             " differs from the checkpoint's " + std::to_string(model.rate_index));
  }
  auto codec = model.codec;
  io::write_png(out_path, decompress(codec, stream, lambda_override));
}

EvalRecord evaluate_image(const LoadedModel& model, const std::string& name,
                          const torch::Tensor& image, double lambda) {
  auto codec = model.codec;
  auto encoded = compress(codec, image, lambda, model.rate_index);
  const auto stream = entropy::unpack_bitstream(encoded.bytes);
  auto x_hat = decompress(codec, stream);
  // Metrics on the 8-bit image a user would see.
  auto rgb = io::to_rgb8(x_hat);
  auto shown = io::from_rgb8(rgb, x_hat.size(2), x_hat.size(3)).unsqueeze(0);
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;

  torch::NoGradGuard no_grad;
  EvalRecord r;
  r.image = name;
  r.lambda = lambda;
  r.rate_index = model.rate_index;
  r.bpp = static_cast<double>(encoded.bytes.size() * 8) /
          static_cast<double>(image.size(-2) * image.size(-1));
  r.psnr = obj::psnr(x, shown);
  r.ms_ssim = obj::ms_ssim(x, shown).item<double>();
  r.perceptual = obj::perceptual_distance(x, shown).item<double>();
  r.variant = codec->config().variant;
  r.mechanism = codec->config().mechanism;
  return r;
}

std::vector<Aggregate> aggregate(std::vector<EvalRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.rate_index, a.lambda, a.image) < std::tie(b.rate_index, b.lambda, b.image);
  });
  std::vector<Aggregate> out;
  for (const auto& r : records) {
    if (out.empty() || out.back().rate_index != r.rate_index || out.back().lambda != r.lambda) {
      out.push_back({r.lambda, r.rate_index});
    }
    auto& a = out.back();
    ++a.count;
    a.bpp += r.bpp;
    a.psnr += r.psnr;
    a.ms_ssim += r.ms_ssim;
    a.perceptual += r.perceptual;
  }
  for (auto& a : out) {
    const auto n = static_cast<double>(a.count);
    a.bpp /= n;
    a.psnr /= n;
    a.ms_ssim /= n;
    a.perceptual /= n;
  }
  return out;
}

std::vector<Envelope> envelopes(const std::vector<Aggregate>& aggregates) {
  std::map<int, Envelope> by_rate;
  for (const auto& a : aggregates) {
    auto [it, fresh] = by_rate.try_emplace(a.rate_index);
    auto& e = it->second;
    if (fresh) {
      e = {a.rate_index, a.bpp, a.bpp, a.psnr, a.psnr, a.ms_ssim, a.ms_ssim, a.perceptual,
           a.perceptual};
      continue;
    }
    e.bpp_min = std::min(e.bpp_min, a.bpp);
    e.bpp_max = std::max(e.bpp_max, a.bpp);
    e.psnr_min = std::min(e.psnr_min, a.psnr);
    e.psnr_max = std::max(e.psnr_max, a.psnr);
    e.ms_ssim_min = std::min(e.ms_ssim_min, a.ms_ssim);
    e.ms_ssim_max = std::max(e.ms_ssim_max, a.ms_ssim);
    e.perceptual_min = std::min(e.perceptual_min, a.perceptual);
    e.perceptual_max = std::max(e.perceptual_max, a.perceptual);
  }
  std::vector<Envelope> out;
  for (const auto& [rate, e] : by_rate) out.push_back(e);
  return out;
}

SweepResult sweep(const std::vector<std::string>& names, const std::vector<torch::Tensor>& images,
                  const std::map<int, std::string>& checkpoints, const SweepOptions& options) {
  if (names.size() != images.size()) throw ShapeError("sweep: names and images differ in length");
  if (images.empty()) throw DataError("sweep: empty corpus");
  SweepResult result;
  for (int rate : options.rates) {
    auto it = checkpoints.find(rate);
    if (it == checkpoints.end()) {
      result.warnings.push_back("no checkpoint for rate index " + std::to_string(rate) +
                                "; skipped");
      continue;
    }
    auto model = load_model(it->second);
    if (model.rate_index != rate) {
      result.warnings.push_back(it->second + " was trained for rate index " +
                                std::to_string(model.rate_index) + ", listed under " +
                                std::to_string(rate));
    }
    for (double lambda : options.lambdas) {
      for (size_t i = 0; i < images.size(); ++i) {
        auto rec = evaluate_image(model, names[i], images[i], lambda);
        rec.rate_index = rate;
        result.records.push_back(std::move(rec));
      }
    }
  }
  result.aggregates = aggregate(result.records);
  result.envelopes = envelopes(result.aggregates);
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    const fs::path dir(options.out_dir);
    write_records_csv((dir / "records.csv").string(), result.records);
    write_aggregates_csv((dir / "summary.csv").string(), result.aggregates);
    write_envelopes_csv((dir / "envelope.csv").string(), result.envelopes);
    for (const char* metric : {"psnr", "msssim", "perceptual"}) {
      write_rd_svg((dir / ("rd_" + std::string(metric) + ".svg")).string(), metric,
                   result.aggregates);
    }
  }
  return result;
}

void write_records_csv(const std::string& path, const std::vector<EvalRecord>& records) {
  std::string out = "# pvqc records v1\n";
  out += "image,lambda,rate_index,bpp,psnr,ms_ssim,perceptual,variant,mechanism\n";
  for (const auto& r : records) {
    out += r.image + "," + fmt(r.lambda) + "," + std::to_string(r.rate_index) + "," +
           fmt(r.bpp) + "," + fmt(r.psnr) + "," + fmt(r.ms_ssim) + "," + fmt(r.perceptual) + "," +
           to_string(r.variant) + "," + to_string(r.mechanism) + "\n";
  }
  write_text(path, out);
}

void write_aggregates_csv(const std::string& path, const std::vector<Aggregate>& aggregates) {
  std::string out = "# pvqc summary v1\n";
  out += "lambda,rate_index,count,bpp,psnr,ms_ssim,perceptual\n";
  for (const auto& a : aggregates) {
    out += fmt(a.lambda) + "," + std::to_string(a.rate_index) + "," + std::to_string(a.count) +
           "," + fmt(a.bpp) + "," + fmt(a.psnr) + "," + fmt(a.ms_ssim) + "," + fmt(a.perceptual) +
           "\n";
  }
  write_text(path, out);
}

void write_envelopes_csv(const std::string& path, const std::vector<Envelope>& envs) {
  std::string out = "# pvqc envelope v1\n";
  out +=
      "rate_index,bpp_min,bpp_max,psnr_min,psnr_max,psnr_width,ms_ssim_min,ms_ssim_max,"
      "ms_ssim_width,perceptual_min,perceptual_max,perceptual_width\n";
  for (const auto& e : envs) {
    out += std::to_string(e.rate_index) + "," + fmt(e.bpp_min) + "," + fmt(e.bpp_max) + "," +
           fmt(e.psnr_min) + "," + fmt(e.psnr_max) + "," + fmt(e.psnr_max - e.psnr_min) + "," +
           fmt(e.ms_ssim_min) + "," + fmt(e.ms_ssim_max) + "," +
           fmt(e.ms_ssim_max - e.ms_ssim_min) + "," + fmt(e.perceptual_min) + "," +
           fmt(e.perceptual_max) + "," + fmt(e.perceptual_max - e.perceptual_min) + "\n";
  }
  write_text(path, out);
}

void write_rd_svg(const std::string& path, const std::string& metric,
                  const std::vector<Aggregate>& aggregates) {
  constexpr double kW = 640, kH = 420, kL = 70, kR = 130, kT = 30, kB = 50;
  double x0 = std::numeric_limits<double>::max(), x1 = -x0, y0 = x0, y1 = -x0;
  std::map<double, std::vector<std::pair<double, double>>> curves;
  std::map<int, std::pair<double, double>> band_lo, band_hi;  // rate -> (bpp, value)
  for (const auto& a : aggregates) {
    const double v = metric_of(a, metric);
    curves[a.lambda].emplace_back(a.bpp, v);
    x0 = std::min(x0, a.bpp), x1 = std::max(x1, a.bpp);
    y0 = std::min(y0, v), y1 = std::max(y1, v);
    auto lo = band_lo.try_emplace(a.rate_index, a.bpp, v).first;
    auto hi = band_hi.try_emplace(a.rate_index, a.bpp, v).first;
    if (v < lo->second.second) lo->second = {a.bpp, v};
    if (v > hi->second.second) hi->second = {a.bpp, v};
  }
  if (aggregates.empty()) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.05, x1 += 0.05;
  if (y1 - y0 < 1e-12) y0 -= 0.05, y1 += 0.05;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto py = [&](double y) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); };

  std::ostringstream s;
  s.precision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // Adaptive range: polygon through per-rate minima, back through maxima.
  if (band_lo.size() > 0) {
    s << "<polygon fill=\"#8fd18f\" fill-opacity=\"0.35\" stroke=\"none\" points=\"";
    for (const auto& [rate, p] : band_lo) s << px(p.first) << ',' << py(p.second) << ' ';
    for (auto it = band_hi.rbegin(); it != band_hi.rend(); ++it) {
      s << px(it->second.first) << ',' << py(it->second.second) << ' ';
    }
    s << "\"/>\n";
  }
  s << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
    << kH - kB << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << px(xv) << "\" y=\"" << kH - kB + 18 << "\" text-anchor=\"middle\">"
      << fmt(xv, 3) << "</text>\n";
    s << "<text x=\"" << kL - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">"
      << fmt(yv, 4) << "</text>\n";
  }
  s << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 10
    << "\" text-anchor=\"middle\">bpp</text>\n";
  s << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" transform=\"rotate(-90 16 "
    << (kT + kH - kB) / 2 << ")\" text-anchor=\"middle\">" << metric << "</text>\n";
  int k = 0;
  for (auto& [lambda, pts] : curves) {
    std::sort(pts.begin(), pts.end());
    const int hue = static_cast<int>(240.0 * (1.0 - lambda));
    s << "<polyline fill=\"none\" stroke=\"hsl(" << hue << ",70%,45%)\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) s << px(x) << ',' << py(y) << ' ';
    s << "\"/>\n";
    for (const auto& [x, y] : pts) {
      s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"hsl(" << hue
        << ",70%,45%)\"/>\n";
    }
    s << "<text x=\"" << kW - kR + 12 << "\" y=\"" << kT + 16 * (k++ + 1) << "\" fill=\"hsl("
      << hue << ",70%,45%)\">lambda=" << fmt(lambda, 3) << "</text>\n";
  }
  s << "</svg>\n";
  write_text(path, s.str());
}

std::string summarize_model(const LoadedModel& model) {
  const auto summary = model.codec->summary();
  const auto& cfg = model.codec->config();
  std::ostringstream os;
  os << "variant " << to_string(cfg.variant) << ", mechanism " << to_string(cfg.mechanism)
     << ", rate index " << model.rate_index;
  if (!model.metric.empty()) os << ", objective " << model.metric;
  os << "\n";
  for (const auto& [name, count] : summary.groups) {
    os << "  " << name << std::string(name.size() < 18 ? 18 - name.size() : 1, ' ') << count
       << "\n";
  }
  os << "  conditioning      " << summary.conditioning << "\n";
  os << "  total             " << summary.total << "\n";
  return os.str();
}

}  // namespace pvqc::harness
