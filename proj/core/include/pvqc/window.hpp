// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace pvqc::wt {

// Token grids are channels-last: [B, H, W, C].  Window batches are
// [B * nW, N, C] with windows enumerated row-major inside each image.

/// Cyclically rolls the grid by -shift on both spatial axes, then tiles it
/// into non-overlapping window x window blocks.
torch::Tensor window_partition(const torch::Tensor& grid, int64_t window, int64_t shift);

/// Inverse of window_partition for a grid of height x width.
torch::Tensor window_merge(const torch::Tensor& windows, int64_t window, int64_t shift,
                           int64_t height, int64_t width);

/// Partitions a half-resolution prompt grid so that prompt window k is
/// collocated with image window k of window_partition(image, window, shift):
/// side window/2, shift shift/2.
torch::Tensor prompt_partition(const torch::Tensor& prompts, int64_t window, int64_t shift);

/// Replicate-pads a [B, H, W, C] grid at the bottom/right edge up to
/// multiples of `multiple`.
torch::Tensor pad_grid(const torch::Tensor& grid, int64_t multiple);

/// Replicate-pads a [B, H, W, C] grid to exactly height x width.
torch::Tensor pad_grid_to(const torch::Tensor& grid, int64_t height, int64_t width);

/// Additive attention mask [nW, N, M] for shifted windows: 0 where the query
/// and key came from the same pre-roll region, -inf elsewhere.  The first
/// M - N key columns belong to the collocated prompt window (may be zero).
/// Returns an undefined tensor when shift == 0.
torch::Tensor shifted_window_mask(int64_t height, int64_t width, int64_t window, int64_t shift,
                                  bool with_prompts);

}  // namespace pvqc::wt
