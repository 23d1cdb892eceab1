// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pvqc {

/// Invalid configuration or argument (window sizes, lambda range, variant
/// combinations).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor shapes that do not agree with the operation's contract.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure: NaN logits, diverging losses.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed container or entropy-coded payload.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Entropy decoding failure at a known byte offset.
class DecodeError : public FormatError {
public:
  DecodeError(const std::string& what, std::size_t position)
      : FormatError(what + " (byte " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

private:
  std::size_t position_;
};

/// Unusable input data (unreadable images, empty corpus).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint and bitstream (or request) disagree about the model.
class ModelMismatchError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace pvqc
