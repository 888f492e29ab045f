#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onestream/rng.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

enum class CorruptionMode { vanilla, guided, masked };

std::string to_string(CorruptionMode mode);
CorruptionMode parse_corruption_mode(const std::string& name);

struct CorruptionConfig {
  CorruptionMode mode = CorruptionMode::guided;
  double fraction = 0.05;
  int patch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const CorruptionConfig&, const CorruptionConfig&) = default;
};

/// Gray level written into masked patches.
inline constexpr Real kMaskGray = Real(0.5);

/// floor(fraction * patches + 0.5)
std::size_t corrupted_patch_count(double fraction, std::size_t patches);

/// Picks `count` of `patches` grid positions uniformly without replacement
/// (partial Fisher-Yates), returned in ascending order.
std::vector<std::size_t> choose_patches(std::size_t patches, std::size_t count, Rng& rng);

struct Corrupted {
  Tensor clip;
  std::vector<std::size_t> patches;  // replaced grid positions, row-major
};

/// Builds the model input for generalized future prediction from an input
/// clip and its future clip, both (3 n, H, W). The same patch positions are
/// replaced in every frame: guided copies the future clip's patches, masked
/// writes mid-gray, vanilla (or fraction 0) returns the input unchanged.
Corrupted corrupt(const Tensor& input_clip, const Tensor& future_clip,
                  const CorruptionConfig& config, Rng& rng);

}  // namespace onestream
