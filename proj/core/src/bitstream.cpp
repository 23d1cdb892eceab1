// SPDX-License-Identifier: Apache-2.0
#include "pvqc/bitstream.hpp"

#include "pvqc/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pvqc::entropy {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("bitstream truncated in ") + what + " at byte " +
                        std::to_string(pos_));
    }
    auto part = bytes_.subspan(pos_, n);
    pos_ += n;
    return part;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto b = take(2, what);
    return static_cast<std::uint16_t>((b[0] << 8) | b[1]);
  }
  std::uint32_t u32(const char* what) {
    auto b = take(4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint16_t BitstreamHeader::fix_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda " + std::to_string(lambda) + " outside [0, 1]");
  }
  return static_cast<std::uint16_t>(std::lround(lambda * 65535.0));
}

std::vector<std::uint8_t> pack_bitstream(const Bitstream& stream) {
  const auto& h = stream.header;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 8 + stream.z_chunk.size() + stream.y_chunk.size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  out.push_back(h.version);
  out.push_back(static_cast<std::uint8_t>(h.variant));
  out.push_back(static_cast<std::uint8_t>(h.mechanism));
  put_u16(out, h.lambda_fixed);
  out.push_back(h.rate_index);
  put_u16(out, h.height);
  put_u16(out, h.width);
  out.push_back(h.pad_h);
  out.push_back(h.pad_w);
  for (const auto* chunk : {&stream.z_chunk, &stream.y_chunk}) {
    if (chunk->size() > 0xFFFFFFFFu) throw FormatError("bitstream chunk exceeds 4 GiB");
    put_u32(out, static_cast<std::uint32_t>(chunk->size()));
    out.insert(out.end(), chunk->begin(), chunk->end());
  }
  return out;
}

Bitstream unpack_bitstream(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(kMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw FormatError("not a PVQC bitstream (bad magic)");
  }
  Bitstream s;
  auto& h = s.header;
  h.version = r.u8("version");
  if (h.version != kBitstreamVersion) {
    throw FormatError("unsupported bitstream version " + std::to_string(h.version));
  }
  h.variant = variant_from_byte(r.u8("variant"));
  h.mechanism = mechanism_from_byte(r.u8("mechanism"));
  h.lambda_fixed = r.u16("lambda");
  h.rate_index = r.u8("rate index");
  h.height = r.u16("height");
  h.width = r.u16("width");
  h.pad_h = r.u8("pad_h");
  h.pad_w = r.u8("pad_w");
  for (auto* chunk : {&s.z_chunk, &s.y_chunk}) {
    const std::uint32_t length = r.u32("chunk length");
    auto payload = r.take(length, "chunk payload");
    chunk->assign(payload.begin(), payload.end());
  }
  if (r.remaining() != 0) {
    throw FormatError("bitstream has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return s;
}

}  // namespace pvqc::entropy
