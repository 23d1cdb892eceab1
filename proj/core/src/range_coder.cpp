// SPDX-License-Identifier: Apache-2.0
#include "pvqc/range_coder.hpp"

#include "pvqc/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace pvqc::entropy {
namespace {
constexpr std::uint32_t kTop = 1u << 24;
constexpr unsigned kLengthBits = 5;
}  // namespace

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, unsigned total_bits) {
  const std::uint32_t step = range_ >> total_bits;
  low_ += static_cast<std::uint64_t>(step) * cum;
  range_ = step * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::encode_bits(std::uint32_t value, unsigned nbits) {
  while (nbits > 0) {
    const unsigned chunk = std::min(nbits, 16u);
    nbits -= chunk;
    encode((value >> nbits) & ((1u << chunk) - 1u), 1, chunk);
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t byte = cache_;
    do {
      // The very first byte is always zero; it is implied, not stored.
      if (!first_) out_.push_back(static_cast<std::uint8_t>(byte + carry));
      first_ = false;
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> data) : data_(data) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= data_.size()) throw DecodeError("entropy stream truncated", pos_);
  return data_[pos_++];
}

void RangeDecoder::normalize() {
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::peek(unsigned total_bits) {
  step_ = range_ >> total_bits;
  const std::uint32_t slot = code_ / step_;
  if (slot >= (1u << total_bits)) throw DecodeError("entropy stream corrupt", pos_);
  return slot;
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq) {
  code_ -= step_ * cum;
  range_ = step_ * freq;
  normalize();
}

std::uint32_t RangeDecoder::decode_bits(unsigned nbits) {
  std::uint32_t value = 0;
  while (nbits > 0) {
    const unsigned chunk = std::min(nbits, 16u);
    nbits -= chunk;
    const std::uint32_t part = peek(chunk);
    consume(part, 1);
    value |= part << nbits;
  }
  return value;
}

double CdfTable::probability(std::int32_t v) const {
  const std::size_t sym = (v < min_value() || v > max_value())
                              ? escape_symbol()
                              : static_cast<std::size_t>(v - offset);
  return static_cast<double>(frequency(sym)) / kTotalFrequency;
}

CdfTable quantize_pmf(std::span<const double> pmf, double tail_mass, std::int32_t offset) {
  if (pmf.empty()) throw ConfigError("quantize_pmf: empty pmf");
  const std::size_t nsym = pmf.size() + 1;
  if (nsym > kTotalFrequency / 2) throw ConfigError("quantize_pmf: alphabet too large");
  std::vector<std::int64_t> freq(nsym);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < nsym; ++i) {
    const double p = i + 1 < nsym ? pmf[i] : tail_mass;
    if (!std::isfinite(p) || p < 0.0) throw ConfigError("quantize_pmf: invalid probability");
    freq[i] = std::max<std::int64_t>(1, std::llround(p * kTotalFrequency));
    total += freq[i];
  }
  // Settle the rounding residue on the most probable symbols.
  std::int64_t residue = static_cast<std::int64_t>(kTotalFrequency) - total;
  while (residue != 0) {
    auto largest = std::max_element(freq.begin(), freq.end());
    if (residue > 0) {
      *largest += residue;
      residue = 0;
    } else {
      const std::int64_t take = std::min(-residue, *largest - 1);
      *largest -= take;
      residue += take;
    }
  }
  CdfTable table;
  table.offset = offset;
  table.cdf.resize(nsym + 1);
  table.cdf[0] = 0;
  for (std::size_t i = 0; i < nsym; ++i) {
    table.cdf[i + 1] = table.cdf[i] + static_cast<std::uint32_t>(freq[i]);
  }
  return table;
}

namespace {

const CdfTable& table_at(std::span<const CdfTable> tables, std::int32_t index) {
  if (index < 0 || static_cast<std::size_t>(index) >= tables.size()) {
    throw ConfigError("entropy table index " + std::to_string(index) + " out of range");
  }
  return tables[static_cast<std::size_t>(index)];
}

}  // namespace

std::vector<std::uint8_t> encode_symbols(std::span<const std::int32_t> values,
                                         std::span<const std::int32_t> indexes,
                                         std::span<const CdfTable> tables) {
  if (values.size() != indexes.size()) {
    throw ShapeError("encode_symbols: values and indexes differ in length");
  }
  RangeEncoder enc;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const CdfTable& t = table_at(tables, indexes[i]);
    const std::int32_t v = values[i];
    if (v >= t.min_value() && v <= t.max_value()) {
      const auto sym = static_cast<std::size_t>(v - t.offset);
      enc.encode(t.cdf[sym], t.frequency(sym));
      continue;
    }
    const std::uint32_t esc = t.escape_symbol();
    enc.encode(t.cdf[esc], t.frequency(esc));
    const bool above = v > t.max_value();
    const std::uint64_t distance = above
        ? static_cast<std::uint64_t>(static_cast<std::int64_t>(v) - t.max_value())
        : static_cast<std::uint64_t>(static_cast<std::int64_t>(t.min_value()) - v);
    const auto width = static_cast<unsigned>(std::bit_width(distance));  // 1..32
    enc.encode_bits(above ? 1u : 0u, 1);
    enc.encode_bits(width - 1, kLengthBits);
    enc.encode_bits(static_cast<std::uint32_t>(distance & ((std::uint64_t{1} << (width - 1)) - 1)),
                    width - 1);
  }
  return enc.finish();
}

std::vector<std::int32_t> decode_symbols(std::span<const std::uint8_t> bytes,
                                         std::span<const std::int32_t> indexes,
                                         std::span<const CdfTable> tables) {
  RangeDecoder dec(bytes);
  std::vector<std::int32_t> values(indexes.size());
  for (std::size_t i = 0; i < indexes.size(); ++i) {
    const CdfTable& t = table_at(tables, indexes[i]);
    const std::uint32_t slot = dec.peek();
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), slot);
    const auto sym = static_cast<std::uint32_t>(std::distance(t.cdf.begin(), it) - 1);
    dec.consume(t.cdf[sym], t.frequency(sym));
    if (sym != t.escape_symbol()) {
      values[i] = t.offset + static_cast<std::int32_t>(sym);
      continue;
    }
    const bool above = dec.decode_bits(1) != 0;
    const unsigned width = dec.decode_bits(kLengthBits) + 1;
    const std::uint64_t distance =
        (std::uint64_t{1} << (width - 1)) | dec.decode_bits(width - 1);
    const std::int64_t v = above ? static_cast<std::int64_t>(t.max_value()) + static_cast<std::int64_t>(distance)
                                 : static_cast<std::int64_t>(t.min_value()) - static_cast<std::int64_t>(distance);
    if (v < INT32_MIN || v > INT32_MAX) throw DecodeError("escaped value overflows int32", dec.position());
    values[i] = static_cast<std::int32_t>(v);
  }
  return values;
}

}  // namespace pvqc::entropy
