#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "onestream/rng.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

enum class Task { pixels, segmentation, depth };

std::string to_string(Task task);
Task parse_task(const std::string& name);

/// One video: frames stored as 8-bit RGB planes, plus optional aligned
/// annotation planes.
struct Video {
  std::size_t frames = 0;
  std::vector<std::uint8_t> rgb;        // frames x 3 x H x W
  std::vector<std::int16_t> labels;     // frames x H x W, -1 = ignore; empty if absent
  std::vector<std::uint16_t> depth_mm;  // frames x H x W, 0 = invalid; empty if absent
};

/// Ordered videos with shared resolution. Immutable once built; cursors and
/// readers share it through shared_ptr<const AnnotatedStream>.
struct AnnotatedStream {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  double fps = 25.0;
  std::vector<Video> videos;

  bool has_labels() const;
  bool has_depth() const;
  bool has_channel(Task task) const;
  std::size_t total_frames() const;
  /// Throws ConfigError when planes are misaligned or labels out of range.
  void validate() const;
};

struct SyntheticConfig {
  int videos = 16;
  int frames_per_video = 200;
  int resolution = 32;
  int shapes = 3;
  double velocity_min = 0.05;  // pixels / frame
  double velocity_max = 0.4;
  double size_min = 0.15;      // fraction of the resolution
  double size_max = 0.35;
  double background_drift = 0.01;  // radians / frame of the background pattern phase
  int classes = 9;
  double depth_min = 1.0;   // meters
  double depth_max = 8.0;   // background depth
  int depth_layers = 4;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

/// Scenes of colored rectangles and circles moving at constant velocity
/// (reflecting at the borders) over a slowly drifting background. The label
/// of a pixel is the class of the nearest shape covering it (background is
/// class 0); class ids 1..C-1 enumerate (color, kind) pairs. Depth is the
/// covering shape's layer, background at depth_max.
AnnotatedStream synth_stream(const SyntheticConfig& config);

/// Color used for synthetic shapes of a given class (class >= 1).
std::array<double, 3> synthetic_class_color(int class_id, int num_classes);

/// An input time step: n_frames RGB frames stacked along channels,
/// (3 n, H, W) with values in [0, 1].
struct TimeStep {
  Tensor pixels;
  std::size_t video = 0;
  std::size_t first_frame = 0;
  int n_frames = 0;
};

/// The raw target slice for one time step, in the task's native space.
struct RawTarget {
  Task task = Task::pixels;
  std::size_t video = 0;
  std::size_t first_frame = 0;
  int n_frames = 0;
  int height = 0;
  int width = 0;
  Tensor rgb;                       // pixels: (3 n, H, W)
  std::vector<int> labels;          // segmentation: n*H*W, -1 = ignore
  Tensor depth;                     // depth: (n, H, W) meters
  std::vector<std::uint8_t> valid;  // segmentation/depth: n*H*W, 1 = annotated
};

struct Example {
  TimeStep input;
  RawTarget target;
};

struct Position {
  std::size_t video = 0;
  std::size_t frame = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

/// (video, first frame) of every time step whose target, `displacement`
/// time steps ahead, stays inside the same video. Time steps advance by
/// n_frames.
std::vector<Position> valid_positions(const AnnotatedStream& stream, int n_frames,
                                      int displacement);

TimeStep read_time_step(const AnnotatedStream& stream, Position pos, int n_frames);
RawTarget read_target(const AnnotatedStream& stream, Task task, Position pos, int n_frames);

enum class CursorMode { sequential, iid };

/// Single-consumer reader over an immutable stream.
class StreamCursor {
 public:
  static StreamCursor sequential(std::shared_ptr<const AnnotatedStream> stream, Task task,
                                 int n_frames, int displacement);
  static StreamCursor iid(std::shared_ptr<const AnnotatedStream> stream, Task task,
                          int n_frames, int displacement, std::uint64_t seed);

  /// Sequential: the next valid position in order, absent at stream end.
  /// IID: a uniform draw with replacement over valid positions.
  std::optional<Position> next_position();
  std::optional<Example> next();
  Example make_example(Position pos) const;

  CursorMode mode() const { return mode_; }
  Task task() const { return task_; }
  int n_frames() const { return n_frames_; }
  int displacement() const { return displacement_; }
  const std::vector<Position>& positions() const { return positions_; }
  const AnnotatedStream& stream() const { return *stream_; }

  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  StreamCursor(std::shared_ptr<const AnnotatedStream> stream, Task task, int n_frames,
               int displacement, CursorMode mode, std::uint64_t seed);

  std::shared_ptr<const AnnotatedStream> stream_;
  Task task_;
  int n_frames_;
  int displacement_;
  CursorMode mode_;
  std::vector<Position> positions_;
  std::size_t next_ = 0;
  Rng rng_;
};

/// IID permutation of a stream: random time steps from random videos.
StreamCursor iid_sampler(std::shared_ptr<const AnnotatedStream> stream, int displacement,
                         Task task, std::uint64_t seed, int n_frames = 4);

enum class AugmentMode { per_step, per_video };

std::string to_string(AugmentMode mode);
AugmentMode parse_augment_mode(const std::string& name);

struct AugmentConfig {
  AugmentMode mode = AugmentMode::per_step;
  double crop_fraction = 1.0;  // side of the crop window relative to the frame
  double flip_prob = 0.0;      // horizontal flip probability
  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

/// Geometric transform: crop window resized back to full resolution by
/// nearest neighbor, then optional horizontal flip.
struct Transform {
  std::size_t video = 0;
  int crop_h = 0;
  int crop_w = 0;
  int offset_y = 0;
  int offset_x = 0;
  bool flip = false;
  friend bool operator==(const Transform&, const Transform&) = default;
};

/// Applies the same transform to the input frames and the target slice.
Example apply_transform(const Example& example, const Transform& transform);

class Augmenter {
 public:
  /// Throws ConfigError when displacement > 0: a random transform of a
  /// future target is unpredictable without feeding its parameters in.
  Augmenter(AugmentConfig config, int displacement, std::uint64_t seed);

  Transform draw(std::size_t video, int height, int width);
  Example apply(const Example& example);

  const std::vector<Transform>& log() const { return log_; }
  std::string save_state() const;
  void load_state(const std::string& state);

 private:
  AugmentConfig config_;
  Rng rng_;
  std::optional<Transform> current_video_;
  std::vector<Transform> log_;
};

}  // namespace onestream
