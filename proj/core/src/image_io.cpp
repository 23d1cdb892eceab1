// SPDX-License-Identifier: Apache-2.0
#include "pvqc/image_io.hpp"

#include "pvqc/error.hpp"
#include "pvqc/tensor_archive.hpp"

#include <png.h>

#include <algorithm>
#include <cstring>
#include <filesystem>

namespace pvqc::io {
namespace fs = std::filesystem;

torch::Tensor read_png(const std::string& path) {
  const auto bytes = read_file(path);
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DataError(path + ": " + image.message);
  }
  if (image.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw DataError(path + ": 16-bit PNG is not supported");
  }
  image.format = PNG_FORMAT_RGB;
  const int64_t height = image.height, width = image.width;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError(path + ": " + image.message);
  }
  return from_rgb8(rgb, height, width);
}

std::vector<std::uint8_t> to_rgb8(const torch::Tensor& image) {
  auto img = image.dim() == 4 ? image.squeeze(0) : image;
  if (img.dim() != 3 || img.size(0) != 3) throw ShapeError("expected a [3, H, W] image");
  auto u8 = (img.detach().to(torch::kFloat).clamp(0.0, 1.0) * 255.0)
                .round()
                .to(torch::kUInt8)
                .permute({1, 2, 0})
                .contiguous();
  return {u8.data_ptr<std::uint8_t>(), u8.data_ptr<std::uint8_t>() + u8.numel()};
}

torch::Tensor from_rgb8(const std::vector<std::uint8_t>& rgb, int64_t height, int64_t width) {
  if (rgb.size() != static_cast<size_t>(height * width * 3)) {
    throw ShapeError("from_rgb8: buffer size does not match dimensions");
  }
  auto t = torch::from_blob(const_cast<std::uint8_t*>(rgb.data()), {height, width, 3},
                            torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

void write_png(const std::string& path, const torch::Tensor& image) {
  auto img = image.dim() == 4 ? image.squeeze(0) : image;
  const auto rgb = to_rgb8(img);
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(img.size(2));
  desc.height = static_cast<png_uint_32>(img.size(1));
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(desc, size, 0, rgb.data(), 0, nullptr)) {
    throw DataError(path + ": " + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw DataError(path + ": " + desc.message);
  }
  out.resize(size);
  write_file_atomic(path, out);
}

IngestResult ingest_images(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw DataError(dir + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  IngestResult result;
  for (const auto& f : files) {
    try {
      result.images.push_back(read_png(f.string()));
      result.names.push_back(f.filename().string());
    } catch (const DataError& e) {
      result.warnings.emplace_back(e.what());
    }
  }
  if (result.images.empty()) throw DataError(dir + ": no loadable PNG images");
  return result;
}

}  // namespace pvqc::io
