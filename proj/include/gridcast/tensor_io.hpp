#pragma once

// Tensor container files ("GCT1"), little-endian:
//   magic "GCT1" | u32 entry count | entries...
//   entry: u16 name length | UTF-8 name | u8 dtype (0=u8, 1=f32, 2=f64)
//          | u8 ndim | u32 dims[ndim] | row-major payload

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

using AnyTensor = std::variant<Tensor<std::uint8_t>, Tensor<float>, Tensor<double>>;
using TensorMap = std::map<std::string, AnyTensor>;

enum class DType : std::uint8_t { u8 = 0, f32 = 1, f64 = 2 };

class TensorFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public TensorFileError {
 public:
  using TensorFileError::TensorFileError;
};
class TruncatedFileError : public TensorFileError {
 public:
  using TensorFileError::TensorFileError;
};
class UnknownDTypeError : public TensorFileError {
 public:
  using TensorFileError::TensorFileError;
};

/// Writes via a temporary file and an atomic rename.
void write_tensor_file(const std::filesystem::path& path, const TensorMap& entries);
TensorMap read_tensor_file(const std::filesystem::path& path);

/// Location of one entry inside a container, from a header-only scan.
struct EntryInfo {
  DType dtype;
  Shape shape;
  std::uint64_t payload_offset;
};

std::map<std::string, EntryInfo> scan_tensor_file(const std::filesystem::path& path);

/// Reads rows [first, first + count) along axis 0 of a u8 entry without
/// loading the rest of the payload.
Tensor<std::uint8_t> read_u8_rows(const std::filesystem::path& path, const std::string& name, Index first,
                                  Index count);

/// FNV-1a 64 of a file's bytes, or of every regular file under a directory
/// (relative path and contents, in sorted path order). Skips `skip` file names.
std::uint64_t content_digest(const std::filesystem::path& path, const std::vector<std::string>& skip = {});
std::string hex_digest(std::uint64_t d);

template <typename T>
const Tensor<T>& get(const TensorMap& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw TensorFileError("missing tensor entry '" + name + "'");
  if (!std::holds_alternative<Tensor<T>>(it->second)) {
    throw TensorFileError("tensor entry '" + name + "' has an unexpected dtype");
  }
  return std::get<Tensor<T>>(it->second);
}

}  // namespace gridcast
