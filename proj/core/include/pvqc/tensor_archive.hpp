// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pvqc {

/// Versioned container of named arrays plus string metadata; the on-disk
/// form of checkpoints and external metric weights.
///
/// Layout (little-endian): "PVQM" u16 version, u32 #meta {u32 len key, u32
/// len value}, u32 #arrays {u32 len name, u8 dtype, u8 ndim, i64 dims[ndim],
/// raw data}.  Readers ignore metadata keys they do not know.
class TensorArchive {
public:
  static constexpr std::uint16_t kVersion = 1;

  void put(const std::string& name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  /// Throws FormatError when missing.
  const torch::Tensor& tensor(const std::string& name) const;
  const std::map<std::string, torch::Tensor>& tensors() const { return tensors_; }

  void set_meta(const std::string& key, std::string value) { meta_[key] = std::move(value); }
  std::optional<std::string> meta(const std::string& key) const;
  const std::map<std::string, std::string>& metadata() const { return meta_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  /// Writes to a temporary sibling, then renames over `path`.
  void write(const std::string& path) const;
  static TensorArchive read(const std::string& path);

private:
  std::map<std::string, torch::Tensor> tensors_;
  std::map<std::string, std::string> meta_;
};

/// Reads a whole file; throws DataError when it cannot be opened.
std::vector<std::uint8_t> read_file(const std::string& path);
/// Atomic write (temporary file + rename).
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace pvqc
