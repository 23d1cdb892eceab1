// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pvqc {

/// Which side of the codec is conditioned on the trade-off parameter.
enum class Variant : std::uint8_t { None = 0, BothSide = 1, DecoderSide = 2 };

/// How the condition is injected.
enum class Mechanism : std::uint8_t { Prompt = 0, Sft = 1, Beta = 2 };

std::string to_string(Variant v);
std::string to_string(Mechanism m);

/// Accepts the CLI spellings "both", "decoder", "none".
Variant parse_variant(std::string_view text);
/// Accepts "prompt", "sft", "beta".
Mechanism parse_mechanism(std::string_view text);

Variant variant_from_byte(std::uint8_t b);
Mechanism mechanism_from_byte(std::uint8_t b);

inline bool conditions_encoder(Variant v) { return v == Variant::BothSide; }
inline bool conditions_decoder(Variant v) { return v != Variant::None; }

}  // namespace pvqc
