// SPDX-License-Identifier: Apache-2.0
#include "pvqc/tensor_archive.hpp"

#include "pvqc/error.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace pvqc {
namespace {

constexpr char kMagic[4] = {'P', 'V', 'Q', 'M'};

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2, U8 = 3, I32 = 4 };

DType dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return DType::F32;
    case torch::kDouble: return DType::F64;
    case torch::kLong: return DType::I64;
    case torch::kByte: return DType::U8;
    case torch::kInt: return DType::I32;
    default: throw ConfigError("TensorArchive: unsupported dtype");
  }
}

torch::ScalarType scalar_type(std::uint8_t code) {
  switch (static_cast<DType>(code)) {
    case DType::F32: return torch::kFloat;
    case DType::F64: return torch::kDouble;
    case DType::I64: return torch::kLong;
    case DType::U8: return torch::kByte;
    case DType::I32: return torch::kInt;
  }
  throw FormatError("TensorArchive: unknown dtype code " + std::to_string(code));
}

template <typename T>
void put_pod(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Cursor {
public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  const std::uint8_t* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("TensorArchive: truncated data");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint32_t>();
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& tensor) {
  dtype_code(tensor.scalar_type());
  tensors_[name] = tensor.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& TensorArchive::tensor(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw FormatError("TensorArchive: missing array '" + name + "'");
  return it->second;
}

std::optional<std::string> TensorArchive::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_pod<std::uint16_t>(out, kVersion);
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    put_string(out, k);
    put_string(out, v);
  }
  put_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& [name, t] : tensors_) {
    put_string(out, name);
    put_pod<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_code(t.scalar_type())));
    put_pod<std::uint8_t>(out, static_cast<std::uint8_t>(t.dim()));
    for (auto d : t.sizes()) put_pod<std::int64_t>(out, d);
    const auto* p = static_cast<const std::uint8_t*>(t.data_ptr());
    out.insert(out.end(), p, p + t.nbytes());
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  Cursor c(bytes);
  if (std::memcmp(c.take(4), kMagic, 4) != 0) throw FormatError("not a PVQM archive (bad magic)");
  const auto version = c.pod<std::uint16_t>();
  if (version != kVersion) {
    throw FormatError("unsupported archive version " + std::to_string(version));
  }
  TensorArchive a;
  const auto n_meta = c.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = c.string();
    a.meta_[key] = c.string();
  }
  const auto n_arrays = c.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    auto name = c.string();
    const auto type = scalar_type(c.pod<std::uint8_t>());
    const auto ndim = c.pod<std::uint8_t>();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) {
      d = c.pod<std::int64_t>();
      if (d < 0) throw FormatError("TensorArchive: negative dimension in '" + name + "'");
    }
    auto t = torch::empty(dims, torch::TensorOptions().dtype(type));
    std::memcpy(t.data_ptr(), c.take(t.nbytes()), t.nbytes());
    a.tensors_[name] = t;
  }
  return a;
}

void TensorArchive::write(const std::string& path) const {
  const auto bytes = serialize();
  write_file_atomic(path, bytes);
}

TensorArchive TensorArchive::read(const std::string& path) {
  const auto bytes = read_file(path);
  return deserialize(bytes);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, target);
}

}  // namespace pvqc
