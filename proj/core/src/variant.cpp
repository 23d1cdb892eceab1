// SPDX-License-Identifier: Apache-2.0
#include "pvqc/variant.hpp"

#include "pvqc/error.hpp"

namespace pvqc {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::None: return "none";
    case Variant::BothSide: return "both";
    case Variant::DecoderSide: return "decoder";
  }
  return "?";
}

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::Prompt: return "prompt";
    case Mechanism::Sft: return "sft";
    case Mechanism::Beta: return "beta";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  if (text == "none") return Variant::None;
  if (text == "both") return Variant::BothSide;
  if (text == "decoder") return Variant::DecoderSide;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected both|decoder|none)");
}

Mechanism parse_mechanism(std::string_view text) {
  if (text == "prompt") return Mechanism::Prompt;
  if (text == "sft") return Mechanism::Sft;
  if (text == "beta") return Mechanism::Beta;
  throw ConfigError("unknown mechanism '" + std::string(text) + "' (expected prompt|sft|beta)");
}

Variant variant_from_byte(std::uint8_t b) {
  if (b > 2) throw FormatError("invalid variant byte " + std::to_string(b));
  return static_cast<Variant>(b);
}

Mechanism mechanism_from_byte(std::uint8_t b) {
  if (b > 2) throw FormatError("invalid mechanism byte " + std::to_string(b));
  return static_cast<Mechanism>(b);
}

}  // namespace pvqc
