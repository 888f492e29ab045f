#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "onestream/codec.hpp"
#include "onestream/stream.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

enum class Direction { higher_better, lower_better };

/// Direction of a known metric name (mse_pixel, miou, recall, logrmse, loss,
/// grad_cosine, grad_norm).
Direction metric_direction(const std::string& metric);

struct MetricSample {
  std::int64_t step = 0;
  double value = 0;
};

/// (step, value) samples of one metric on one split, steps strictly increasing.
class MetricSeries {
 public:
  MetricSeries(std::string name, Direction direction) : name_(std::move(name)), direction_(direction) {}

  /// Throws std::invalid_argument for a non-increasing step or non-finite value.
  void add(std::int64_t step, double value);

  const std::string& name() const { return name_; }
  Direction direction() const { return direction_; }
  const std::vector<MetricSample>& samples() const { return samples_; }
  bool empty() const { return samples_.empty(); }

 private:
  std::string name_;
  Direction direction_;
  std::vector<MetricSample> samples_;
};

/// Mean of the piecewise-linear interpolant of `series` at `points` evenly
/// spaced steps spanning [first step, last step]. A single sample returns
/// its value; an empty series throws std::invalid_argument.
double cumulative_score(const MetricSeries& series, std::size_t points = 10000);

struct SegmentationScore {
  double miou = 0;
  double recall = 0;
};

/// Per-frame IoU over valid pixels for every class present in that frame's
/// ground truth; miou averages frames of their class-mean IoU, recall is the
/// fraction of (frame, present class) pairs with IoU > 0.5. Absent when no
/// frame has a valid pixel.
std::optional<SegmentationScore> segmentation_metrics(const std::vector<int>& pred,
                                                      const std::vector<int>& gt,
                                                      const std::vector<std::uint8_t>& valid,
                                                      int n_frames, int num_classes);

/// Pred depth is clamped to >= 1e-3 before the log.
inline constexpr double kMinLogDepth = 1e-3;

/// sqrt(mean over valid pixels of (ln pred - ln gt)^2); absent with no valid
/// pixel.
std::optional<double> logrmse(const Tensor& pred_depth, const Tensor& gt_depth,
                              const std::vector<std::uint8_t>& valid);

using MetricValues = std::vector<std::pair<std::string, double>>;

/// Task metrics for one prediction: mse_pixel always; miou and recall for
/// segmentation; logrmse for depth. Absent metrics are omitted.
MetricValues score_prediction(const TaskCodec& codec, const Tensor& prediction,
                              const RawTarget& target, const EncodedTarget& encoded);

/// Names score_prediction can emit for a task, in emission order.
std::vector<std::string> task_metric_names(Task task);

/// History of one target time step, reduced per spatial location.
struct BlindContribution {
  Tensor sum;    // pixels: (3, H, W) summed over frames; depth: (1, H, W)
  Tensor count;  // (1, H, W) number of valid samples
  Tensor freq;   // segmentation: (C, H, W) class counts
};

/// State of the blind baseline: the last `window` target time steps
/// (window 0 keeps everything).
struct BlindState {
  std::size_t window = 1;
  std::deque<BlindContribution> history;
};

/// Predicts the next target from target history only: per-location mean
/// (pixels, depth) or modal class color (segmentation, ties to the lowest
/// id), replicated across frames; mid-gray where nothing has been seen.
class BlindPredictor {
 public:
  BlindPredictor(TaskCodec codec, int n_frames, int height, int width, std::size_t window = 1);

  Tensor predict() const;
  void observe(const RawTarget& target);

  const BlindState& state() const { return state_; }
  void restore(BlindState state) { state_ = std::move(state); }

 private:
  TaskCodec codec_;
  int n_frames_;
  int height_;
  int width_;
  BlindState state_;
};

/// Prediction from the current state, then the state absorbs `next_target`.
std::pair<Tensor, BlindState> blind_step(BlindPredictor& blind, const RawTarget& next_target);

/// Maps an input time step to an RGB prediction. Must not mutate learner state.
using Predictor = std::function<Tensor(const Tensor& input)>;

/// Fixed evaluation subset of a held-out stream: up to `max_examples`
/// positions spread evenly over all valid positions.
class HeldOutSet {
 public:
  HeldOutSet(std::shared_ptr<const AnnotatedStream> stream, Task task, int n_frames,
             int displacement, std::size_t max_examples);

  const std::vector<Position>& positions() const { return positions_; }
  const std::vector<Example>& examples() const { return examples_; }

 private:
  std::vector<Position> positions_;
  std::vector<Example> examples_;
};

/// Mean of each task metric over the held-out examples. Throws
/// std::invalid_argument for an empty set.
MetricValues out_of_stream_eval(const Predictor& predictor, const HeldOutSet& heldout,
                                const TaskCodec& codec);

/// Expected mIoU of a predictor whose labels are independent of the ground
/// truth: per frame, the mean over present classes c of
/// p_c q_c / (p_c + q_c - p_c q_c), with p the frame's ground-truth class
/// fractions and q the predictor's class fractions.
double chance_miou(const std::vector<int>& gt, const std::vector<std::uint8_t>& valid,
                   int n_frames, const std::vector<double>& predicted_fraction);

}  // namespace onestream
