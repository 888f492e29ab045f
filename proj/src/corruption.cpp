#include "onestream/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onestream/errors.hpp"

namespace onestream {

std::string to_string(CorruptionMode mode) {
  switch (mode) {
    case CorruptionMode::vanilla: return "vanilla";
    case CorruptionMode::guided: return "guided";
    case CorruptionMode::masked: return "masked";
  }
  return "?";
}

CorruptionMode parse_corruption_mode(const std::string& name) {
  for (auto m : {CorruptionMode::vanilla, CorruptionMode::guided, CorruptionMode::masked})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown corruption mode '" + name + "'", "pretrain.mode");
}

void CorruptionConfig::validate() const {
  if (!(fraction >= 0 && fraction <= 1)) throw ConfigError("must be in [0, 1]", "pretrain.fraction");
  if (patch_size < 1) throw ConfigError("must be positive", "pretrain.patch_size");
}

std::size_t corrupted_patch_count(double fraction, std::size_t patches) {
  return static_cast<std::size_t>(std::floor(fraction * double(patches) + 0.5));
}

std::vector<std::size_t> choose_patches(std::size_t patches, std::size_t count, Rng& rng) {
  count = std::min(count, patches);
  std::vector<std::size_t> idx(patches);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(patches - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Corrupted corrupt(const Tensor& input_clip, const Tensor& future_clip,
                  const CorruptionConfig& config, Rng& rng) {
  config.validate();
  if (input_clip.shape() != future_clip.shape())
    throw ShapeError("corrupt: clips " + shape_string(input_clip.shape()) + " and " +
                     shape_string(future_clip.shape()) + " differ");
  if (input_clip.rank() != 3) throw ShapeError("corrupt: clips must be (C, H, W)");
  const std::size_t c = input_clip.dim(0), h = input_clip.dim(1), w = input_clip.dim(2);
  const std::size_t s = config.patch_size;
  if (h % s || w % s)
    throw ConfigError("frame " + std::to_string(h) + "x" + std::to_string(w) +
                          " is not divisible by patch size " + std::to_string(s),
                      "pretrain.patch_size");

  Corrupted out{input_clip, {}};
  if (config.mode == CorruptionMode::vanilla || config.fraction == 0) return out;

  const std::size_t grid_w = w / s;
  const std::size_t patches = (h / s) * grid_w;
  out.patches = choose_patches(patches, corrupted_patch_count(config.fraction, patches), rng);
  for (std::size_t p : out.patches) {
    const std::size_t y0 = (p / grid_w) * s, x0 = (p % grid_w) * s;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = y0; y < y0 + s; ++y)
        for (std::size_t x = x0; x < x0 + s; ++x)
          out.clip.at(ch, y, x) =
              config.mode == CorruptionMode::guided ? future_clip.at(ch, y, x) : kMaskGray;
  }
  return out;
}

}  // namespace onestream
