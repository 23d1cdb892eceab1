// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace pvqc::io {

/// Decodes an 8-bit PNG into [3, H, W] float in [0,1].  Grayscale is
/// replicated to three channels, alpha is dropped, palettes are expanded.
/// Throws DataError for unreadable files and 16-bit images.
torch::Tensor read_png(const std::string& path);

/// Writes [3, H, W] or [1, 3, H, W] in [0,1] as 8-bit RGB (rounded,
/// clamped), atomically.
void write_png(const std::string& path, const torch::Tensor& image);

/// Converts [3, H, W] in [0,1] to interleaved 8-bit RGB, and back.
std::vector<std::uint8_t> to_rgb8(const torch::Tensor& image);
torch::Tensor from_rgb8(const std::vector<std::uint8_t>& rgb, int64_t height, int64_t width);

struct IngestResult {
  std::vector<std::string> names;      ///< file names (sorted)
  std::vector<torch::Tensor> images;   ///< [3, H, W]
  std::vector<std::string> warnings;   ///< one per skipped file
};

/// Loads every *.png in `dir` (sorted by name).  Files that fail to decode
/// are skipped with a warning; a missing directory or one without any
/// loadable PNG throws DataError.
IngestResult ingest_images(const std::string& dir);

}  // namespace pvqc::io
