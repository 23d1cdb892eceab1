// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/bitstream.hpp"
#include "pvqc/codec.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <vector>

namespace pvqc {

struct EncodeResult {
  entropy::Bitstream stream;
  std::vector<std::uint8_t> bytes;  ///< packed container
  entropy::RateReport report;
};

/// Entropy-codes one image ([3, H, W] or [1, 3, H, W], values in [0,1]).
/// The header records the model's variant and mechanism, lambda and
/// rate_index; the chunks depend on lambda only when the encoder is
/// conditioned.
EncodeResult compress(Codec& codec, const torch::Tensor& image, double lambda, int rate_index);

/// Reconstructs [1, 3, H, W] in [0,1].  The header lambda is used unless
/// lambda_override is given, which only decoder-side streams allow.
/// Throws ModelMismatchError when the stream's variant or mechanism differs
/// from the model's or when lambda_override targets a stream that is not
/// decoder-side.
torch::Tensor decompress(Codec& codec, const entropy::Bitstream& stream,
                         std::optional<double> lambda_override = std::nullopt);

/// Shared Gaussian table bank used by compress/decompress.
const entropy::GaussianConditionalTables& gaussian_tables();

}  // namespace pvqc
