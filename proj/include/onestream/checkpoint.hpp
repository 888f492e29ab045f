#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "onestream/tensor.hpp"

namespace onestream {

/// On-disk layout:
///
///   ONESTREAM-CKPT 1\n
///   precision f64\n                (or f32)
///   <key> <value>\n ...           values escape '\\' and newlines
///   end_header\n
///   u32 record count
///   per record: u32 name length, name bytes, u32 rank, u64 dims[rank],
///               size * (4 | 8) bytes of IEEE values
///
/// All integers and values are little-endian.
struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> header;
  TensorMap tensors;

  void set(const std::string& key, std::string value);
  std::optional<std::string> get(const std::string& key) const;
  /// Throws IoError when the key is missing.
  const std::string& require(const std::string& key) const;

  /// Tensors whose name starts with `prefix`, with the prefix removed.
  TensorMap with_prefix(const std::string& prefix) const;
  void insert_with_prefix(const std::string& prefix, const TensorMap& map);
};

/// Writes through a temporary file renamed into place, so a crash never
/// leaves a truncated checkpoint behind. Throws IoError.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Reads either precision into the build's Real type. Throws IoError.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace onestream
