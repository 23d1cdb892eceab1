// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pvqc/variant.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pvqc::entropy {

inline constexpr std::array<std::uint8_t, 4> kMagic{'P', 'V', 'Q', 'C'};
inline constexpr std::uint8_t kBitstreamVersion = 1;
inline constexpr std::size_t kHeaderBytes = 16;

/// Fixed 16-byte header, all integers big-endian:
///   magic[4] version:u8 variant:u8 mechanism:u8 lambda:u16 rate_index:u8
///   height:u16 width:u16 pad_h:u8 pad_w:u8
/// height/width are the unpadded image size.
struct BitstreamHeader {
  std::uint8_t version = kBitstreamVersion;
  Variant variant = Variant::None;
  Mechanism mechanism = Mechanism::Prompt;
  std::uint16_t lambda_fixed = 0;  ///< round(lambda * 65535)
  std::uint8_t rate_index = 0;
  std::uint16_t height = 0;
  std::uint16_t width = 0;
  std::uint8_t pad_h = 0;
  std::uint8_t pad_w = 0;

  double lambda() const { return lambda_fixed / 65535.0; }
  static std::uint16_t fix_lambda(double lambda);

  bool operator==(const BitstreamHeader&) const = default;
};

/// Header followed by two length-prefixed (u32 BE) chunks: z then y.
struct Bitstream {
  BitstreamHeader header;
  std::vector<std::uint8_t> z_chunk;
  std::vector<std::uint8_t> y_chunk;

  bool operator==(const Bitstream&) const = default;
};

std::vector<std::uint8_t> pack_bitstream(const Bitstream& stream);
/// Throws FormatError on bad magic, unknown version, invalid enum bytes,
/// truncation or trailing data.
Bitstream unpack_bitstream(std::span<const std::uint8_t> bytes);

/// Estimated (model) and actual (coded) sizes for one image.
struct RateReport {
  double estimated_bits_y = 0.0;
  double estimated_bits_z = 0.0;
  std::size_t actual_bits_y = 0;
  std::size_t actual_bits_z = 0;
  std::size_t file_bits = 0;  ///< whole container, header and prefixes included
  double bpp = 0.0;           ///< file_bits / (H * W), unpadded
};

}  // namespace pvqc::entropy
