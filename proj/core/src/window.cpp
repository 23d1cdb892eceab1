// SPDX-License-Identifier: Apache-2.0
#include "pvqc/window.hpp"

#include "pvqc/error.hpp"

#include <limits>
#include <string>

namespace pvqc::wt {
namespace {

void check_grid(const torch::Tensor& grid, const char* what) {
  if (grid.dim() != 4) {
    throw ShapeError(std::string(what) + ": expected a [B, H, W, C] grid, got " +
                     std::to_string(grid.dim()) + " dims");
  }
}

void check_tiling(int64_t height, int64_t width, int64_t window, int64_t shift) {
  if (window < 1) throw ConfigError("window side must be >= 1");
  if (shift < 0 || shift >= window) {
    throw ConfigError("window shift " + std::to_string(shift) + " outside [0, " +
                      std::to_string(window) + ")");
  }
  if (height % window != 0 || width % window != 0) {
    throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by window side " + std::to_string(window));
  }
}

// Region id of every cell of the rolled height x width grid under Swin's
// three-slice split along each axis.  Cells in different regions were not
// neighbours before the cyclic roll.
torch::Tensor region_ids(int64_t height, int64_t width, int64_t window, int64_t shift) {
  auto ids = torch::zeros({1, height, width, 1}, torch::kFloat);
  auto acc = ids.accessor<float, 4>();
  auto slice_of = [&](int64_t pos, int64_t extent) {
    if (pos < extent - window) return 0;
    if (pos < extent - shift) return 1;
    return 2;
  };
  for (int64_t r = 0; r < height; ++r) {
    for (int64_t c = 0; c < width; ++c) {
      acc[0][r][c][0] = static_cast<float>(slice_of(r, height) * 3 + slice_of(c, width));
    }
  }
  return ids;
}

}  // namespace

torch::Tensor window_partition(const torch::Tensor& grid, int64_t window, int64_t shift) {
  check_grid(grid, "window_partition");
  const int64_t batch = grid.size(0), height = grid.size(1), width = grid.size(2),
                channels = grid.size(3);
  check_tiling(height, width, window, shift);
  torch::Tensor x = shift > 0 ? torch::roll(grid, {-shift, -shift}, {1, 2}) : grid;
  return x.reshape({batch, height / window, window, width / window, window, channels})
      .permute({0, 1, 3, 2, 4, 5})
      .reshape({-1, window * window, channels});
}

torch::Tensor window_merge(const torch::Tensor& windows, int64_t window, int64_t shift,
                           int64_t height, int64_t width) {
  if (windows.dim() != 3) throw ShapeError("window_merge: expected [B*nW, N, C] windows");
  check_tiling(height, width, window, shift);
  const int64_t per_image = (height / window) * (width / window);
  if (windows.size(1) != window * window || windows.size(0) % per_image != 0) {
    throw ShapeError("window_merge: windows of shape [" + std::to_string(windows.size(0)) + ", " +
                     std::to_string(windows.size(1)) + ", C] do not tile a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid with side " +
                     std::to_string(window));
  }
  const int64_t batch = windows.size(0) / per_image, channels = windows.size(2);
  auto x = windows.reshape({batch, height / window, width / window, window, window, channels})
               .permute({0, 1, 3, 2, 4, 5})
               .reshape({batch, height, width, channels});
  return shift > 0 ? torch::roll(x, {shift, shift}, {1, 2}) : x;
}

torch::Tensor prompt_partition(const torch::Tensor& prompts, int64_t window, int64_t shift) {
  check_grid(prompts, "prompt_partition");
  if (window / 2 < 1 || window % 2 != 0) {
    throw ConfigError("prompt windows need an even image window side >= 2, got " +
                      std::to_string(window));
  }
  if (shift % 2 != 0) {
    throw ConfigError("prompt windows need an even image shift, got " + std::to_string(shift));
  }
  return window_partition(prompts, window / 2, shift / 2);
}

torch::Tensor pad_grid_to(const torch::Tensor& grid, int64_t height, int64_t width) {
  check_grid(grid, "pad_grid_to");
  const int64_t pad_h = height - grid.size(1), pad_w = width - grid.size(2);
  if (pad_h < 0 || pad_w < 0) throw ShapeError("pad_grid_to: target smaller than grid");
  if (pad_h == 0 && pad_w == 0) return grid;
  namespace F = torch::nn::functional;
  auto chw = grid.permute({0, 3, 1, 2});
  auto padded = F::pad(chw, F::PadFuncOptions({0, pad_w, 0, pad_h}).mode(torch::kReplicate));
  return padded.permute({0, 2, 3, 1});
}

torch::Tensor pad_grid(const torch::Tensor& grid, int64_t multiple) {
  check_grid(grid, "pad_grid");
  auto round_up = [multiple](int64_t v) { return (v + multiple - 1) / multiple * multiple; };
  return pad_grid_to(grid, round_up(grid.size(1)), round_up(grid.size(2)));
}

torch::Tensor shifted_window_mask(int64_t height, int64_t width, int64_t window, int64_t shift,
                                  bool with_prompts) {
  if (shift == 0) return {};
  check_tiling(height, width, window, shift);
  // Labels live in the rolled frame, so tile them without rolling again.
  auto labels = region_ids(height, width, window, shift);
  auto image_ids = window_partition(labels, window, 0).squeeze(-1);  // [nW, N]
  torch::Tensor key_ids = image_ids;
  if (with_prompts) {
    // Rolled prompt cell (i, j) covers rolled image cells (2i..2i+1, 2j..2j+1);
    // with an even shift all four share one region, so sample the top-left one.
    auto prompt_grid = labels.index({torch::indexing::Slice(), torch::indexing::Slice(0, height, 2),
                                     torch::indexing::Slice(0, width, 2), torch::indexing::Slice()});
    auto prompt_ids = prompt_partition(prompt_grid.contiguous(), window, 0).squeeze(-1);
    key_ids = torch::cat({prompt_ids, image_ids}, 1);
  }
  auto same = image_ids.unsqueeze(2) == key_ids.unsqueeze(1);  // [nW, N, M]
  return torch::zeros(same.sizes(), torch::kFloat)
      .masked_fill(same.logical_not(), -std::numeric_limits<float>::infinity());
}

}  // namespace pvqc::wt
