#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "onestream/stream.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

using Rgb = std::array<Real, 3>;

/// Ordered palette of distinct colors in [0, 1]^3.
class Colormap {
 public:
  Colormap(std::string name, std::vector<Rgb> colors);

  /// ScanNet/NYU40 label palette; class c uses palette entry c + 1 (entry 0
  /// is the dataset's "unannotated" black). At most 40 classes.
  static Colormap nyu40(int classes = 40);
  /// Matplotlib's 256-entry Viridis.
  static Colormap viridis();
  /// Plain text, one `index r g b` line per entry with r, g, b in [0, 1];
  /// indices must be 0..N-1 in order. Lines starting with '#' are skipped.
  static Colormap load(const std::filesystem::path& path);

  const std::string& name() const { return name_; }
  std::size_t size() const { return colors_.size(); }
  const Rgb& operator[](std::size_t i) const { return colors_.at(i); }

  /// Index of the entry with the smallest squared L2 distance; ties go to
  /// the lowest index.
  std::size_t nearest(Real r, Real g, Real b) const;

 private:
  std::string name_;
  std::vector<Rgb> colors_;
};

/// RGB-encoded target plus validity mask (n, H, W), 1 = annotated.
struct EncodedTarget {
  Tensor rgb;
  Tensor mask;
};

/// Maps task targets to RGB and predictions back to task space.
class TaskCodec {
 public:
  TaskCodec(Task task, Colormap segmentation, Colormap depth, Real max_depth = 8);
  /// Default palettes: NYU40 truncated to `num_classes`, Viridis for depth.
  static TaskCodec standard(Task task, int num_classes);

  Task task() const { return task_; }
  const Colormap& segmentation_colormap() const { return segmentation_; }
  const Colormap& depth_colormap() const { return depth_; }
  Real max_depth() const { return max_depth_; }

  /// Colormap index for a depth in meters: round(clamp(d / max, 0, 1) * (N - 1)).
  std::size_t depth_index(Real meters) const;

 private:
  Task task_;
  Colormap segmentation_;
  Colormap depth_;
  Real max_depth_;
};

/// Pixels: passthrough with a full mask. Segmentation: class color, ignore
/// pixels masked out. Depth: Viridis color of depth / max_depth, invalid
/// pixels masked out. Throws std::invalid_argument for class ids outside the
/// palette or negative depth.
EncodedTarget encode_target(const TaskCodec& codec, const RawTarget& raw);

/// Nearest-color decoding after clamping to [0, 1]. Segmentation returns
/// class ids, depth returns index / (N - 1) * max_depth; pixels returns the
/// clamped frames. `valid` is left empty.
RawTarget decode_prediction(const TaskCodec& codec, const Tensor& rgb);

}  // namespace onestream
