// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace pvqc::entropy {

/// Probabilities are expressed as integer frequencies out of 1 << 16.
inline constexpr unsigned kPrecisionBits = 16;
inline constexpr std::uint32_t kTotalFrequency = 1u << kPrecisionBits;

/// 32-bit renormalizing range encoder with carry propagation (LZMA style).
/// Single use: call finish() once.
class RangeEncoder {
public:
  /// Codes the interval [cum, cum + freq) out of 1 << total_bits.
  void encode(std::uint32_t cum, std::uint32_t freq, unsigned total_bits = kPrecisionBits);
  /// Uniformly coded raw bits, most significant chunk first.
  void encode_bits(std::uint32_t value, unsigned nbits);
  std::vector<std::uint8_t> finish();

private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
  explicit RangeDecoder(std::span<const std::uint8_t> data);

  /// Returns the frequency slot of the next symbol; must be followed by
  /// consume() with the interval containing it.
  std::uint32_t peek(unsigned total_bits = kPrecisionBits);
  void consume(std::uint32_t cum, std::uint32_t freq);
  std::uint32_t decode_bits(unsigned nbits);

  std::size_t position() const { return pos_; }

private:
  std::uint8_t next_byte();
  void normalize();

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t step_ = 0;
};

/// Quantized CDF over a contiguous run of integer values plus one trailing
/// escape symbol for values outside the run.
struct CdfTable {
  std::int32_t offset = 0;          ///< value coded by symbol 0
  std::vector<std::uint32_t> cdf;   ///< size nsym + 1, cdf[0] = 0, back() = 1 << 16

  std::size_t symbols() const { return cdf.empty() ? 0 : cdf.size() - 1; }
  std::uint32_t escape_symbol() const { return static_cast<std::uint32_t>(symbols() - 1); }
  std::int32_t min_value() const { return offset; }
  std::int32_t max_value() const { return offset + static_cast<std::int32_t>(symbols()) - 2; }
  std::uint32_t frequency(std::size_t sym) const { return cdf[sym + 1] - cdf[sym]; }
  /// Model probability of coding value v, escapes included (raw payload bits
  /// not counted).
  double probability(std::int32_t v) const;
};

/// Quantizes an in-range pmf plus tail mass to 16-bit frequencies.  Every
/// symbol, the escape included, keeps a frequency >= 1 and the total is
/// exactly 1 << 16.
CdfTable quantize_pmf(std::span<const double> pmf, double tail_mass, std::int32_t offset);

/// Codes values[i] with tables[indexes[i]]; out-of-range values are escaped
/// and written as raw bits.
std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> values,
                                         std::span<const std::int32_t> indexes,
                                         std::span<const CdfTable> tables);

/// Decodes indexes.size() values.  Throws DecodeError on corrupt/truncated
/// input.
std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> bytes,
                                         std::span<const std::int32_t> indexes,
                                         std::span<const CdfTable> tables);

}  // namespace pvqc::entropy
