#include "onestream/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "onestream/errors.hpp"
#include "onestream/model.hpp"

namespace onestream {

Direction metric_direction(const std::string& m) {
  if (m == "miou" || m == "recall") return Direction::higher_better;
  return Direction::lower_better;
}

void MetricSeries::add(std::int64_t step, double value) {
  if (!samples_.empty() && step <= samples_.back().step)
    throw std::invalid_argument("metric '" + name_ + "': steps must increase");
  if (!std::isfinite(value)) throw std::invalid_argument("metric '" + name_ + "': non-finite value");
  samples_.push_back({step, value});
}

double cumulative_score(const MetricSeries& series, std::size_t points) {
  const auto& s = series.samples();
  if (s.empty()) throw std::invalid_argument("cumulative score of empty series");
  if (s.size() == 1 || points < 2) return s.front().value;
  const double first = double(s.front().step), last = double(s.back().step);
  const double span = last - first;
  // Accumulate deviations from the first value so a constant series is exact.
  const double ref = s.front().value;
  double total = 0;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = i + 1 == points ? last : first + span * double(i) / double(points - 1);
    while (seg + 2 < s.size() && double(s[seg + 1].step) < x) ++seg;
    const double x0 = double(s[seg].step), x1 = double(s[seg + 1].step);
    const double w = std::clamp((x - x0) / (x1 - x0), 0.0, 1.0);
    total += (s[seg].value - ref) + w * (s[seg + 1].value - s[seg].value);
  }
  return ref + total / double(points);
}

std::optional<SegmentationScore> segmentation_metrics(const std::vector<int>& pred,
                                                      const std::vector<int>& gt,
                                                      const std::vector<std::uint8_t>& valid,
                                                      int n_frames, int num_classes) {
  if (pred.size() != gt.size() || gt.size() != valid.size() || n_frames < 1 ||
      gt.size() % std::size_t(n_frames))
    throw ShapeError("segmentation metrics: inconsistent sizes");
  const std::size_t plane = gt.size() / n_frames;
  const std::size_t C = num_classes;
  std::vector<std::size_t> inter(C), gt_count(C), pred_count(C);
  double miou_sum = 0, hits = 0, pairs = 0;
  std::size_t frames = 0;
  for (int f = 0; f < n_frames; ++f) {
    std::fill(inter.begin(), inter.end(), 0);
    std::fill(gt_count.begin(), gt_count.end(), 0);
    std::fill(pred_count.begin(), pred_count.end(), 0);
    std::size_t valid_pixels = 0;
    for (std::size_t p = f * plane; p < (f + 1) * plane; ++p) {
      if (!valid[p]) continue;
      const int g = gt[p], q = pred[p];
      if (g < 0 || std::size_t(g) >= C || q < 0 || std::size_t(q) >= C)
        throw std::invalid_argument("segmentation metrics: label outside [0, C)");
      ++valid_pixels;
      ++gt_count[g];
      ++pred_count[q];
      if (g == q) ++inter[g];
    }
    if (valid_pixels == 0) continue;
    ++frames;
    double frame_sum = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (gt_count[c] == 0) continue;
      const double iou = double(inter[c]) / double(gt_count[c] + pred_count[c] - inter[c]);
      frame_sum += iou;
      ++present;
      pairs += 1;
      if (iou > 0.5) hits += 1;
    }
    miou_sum += frame_sum / double(present);
  }
  if (frames == 0) return std::nullopt;
  return SegmentationScore{miou_sum / double(frames), hits / pairs};
}

std::optional<double> logrmse(const Tensor& pred, const Tensor& gt,
                              const std::vector<std::uint8_t>& valid) {
  if (pred.size() != gt.size() || gt.size() != valid.size())
    throw ShapeError("logrmse: inconsistent sizes");
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    if (!(gt[i] > 0)) throw std::invalid_argument("logrmse: non-positive ground truth depth");
    const double d = std::log(std::max<double>(pred[i], kMinLogDepth)) - std::log(double(gt[i]));
    sum += d * d;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(sum / double(n));
}

std::vector<std::string> task_metric_names(Task task) {
  switch (task) {
    case Task::pixels: return {"mse_pixel"};
    case Task::segmentation: return {"mse_pixel", "miou", "recall"};
    case Task::depth: return {"mse_pixel", "logrmse"};
  }
  return {};
}

MetricValues score_prediction(const TaskCodec& codec, const Tensor& prediction,
                              const RawTarget& target, const EncodedTarget& encoded) {
  MetricValues out;
  bool empty = false;
  const Real mse = l2_pixel_loss(prediction, encoded.rgb, encoded.mask, &empty);
  if (!empty) out.emplace_back("mse_pixel", double(mse));
  if (target.task == Task::pixels) return out;
  const RawTarget decoded = decode_prediction(codec, prediction);
  if (target.task == Task::segmentation) {
    if (auto s = segmentation_metrics(decoded.labels, target.labels, target.valid, target.n_frames,
                                      int(codec.segmentation_colormap().size()))) {
      out.emplace_back("miou", s->miou);
      out.emplace_back("recall", s->recall);
    }
  } else if (auto d = logrmse(decoded.depth, target.depth, target.valid)) {
    out.emplace_back("logrmse", *d);
  }
  return out;
}

BlindPredictor::BlindPredictor(TaskCodec codec, int n_frames, int height, int width,
                               std::size_t window)
    : codec_(std::move(codec)), n_frames_(n_frames), height_(height), width_(width) {
  state_.window = window;
}

Tensor BlindPredictor::predict() const {
  const std::size_t H = height_, W = width_, plane = H * W, n = n_frames_;
  Tensor out({3 * n, H, W}, Real(0.5));
  if (state_.history.empty()) return out;

  // Reduce the window.
  BlindContribution total = state_.history.front();
  for (std::size_t i = 1; i < state_.history.size(); ++i) {
    const BlindContribution& c = state_.history[i];
    for (std::size_t j = 0; j < c.count.size(); ++j) total.count[j] += c.count[j];
    for (std::size_t j = 0; j < c.sum.size(); ++j) total.sum[j] += c.sum[j];
    for (std::size_t j = 0; j < c.freq.size(); ++j) total.freq[j] += c.freq[j];
  }

  for (std::size_t p = 0; p < plane; ++p) {
    if (total.count[p] == Real(0)) continue;
    Rgb color{};
    switch (codec_.task()) {
      case Task::pixels:
        for (std::size_t ch = 0; ch < 3; ++ch) color[ch] = total.sum[ch * plane + p] / total.count[p];
        break;
      case Task::depth:
        color = codec_.depth_colormap()[codec_.depth_index(total.sum[p] / total.count[p])];
        break;
      case Task::segmentation: {
        const std::size_t C = total.freq.dim(0);
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (total.freq[c * plane + p] > total.freq[best * plane + p]) best = c;
        color = codec_.segmentation_colormap()[best];
        break;
      }
    }
    for (std::size_t f = 0; f < n; ++f)
      for (std::size_t ch = 0; ch < 3; ++ch) out[(3 * f + ch) * plane + p] = color[ch];
  }
  return out;
}

void BlindPredictor::observe(const RawTarget& t) {
  const std::size_t H = height_, W = width_, plane = H * W, n = t.n_frames;
  BlindContribution c;
  c.count = Tensor({1, H, W});
  switch (codec_.task()) {
    case Task::pixels:
      c.sum = Tensor({3, H, W});
      for (std::size_t f = 0; f < n; ++f)
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t p = 0; p < plane; ++p) c.sum[ch * plane + p] += t.rgb[(3 * f + ch) * plane + p];
      for (std::size_t p = 0; p < plane; ++p) c.count[p] = Real(n);
      break;
    case Task::depth:
      c.sum = Tensor({1, H, W});
      for (std::size_t f = 0; f < n; ++f)
        for (std::size_t p = 0; p < plane; ++p)
          if (t.valid[f * plane + p]) {
            c.sum[p] += t.depth[f * plane + p];
            c.count[p] += 1;
          }
      break;
    case Task::segmentation:
      c.freq = Tensor({codec_.segmentation_colormap().size(), H, W});
      for (std::size_t f = 0; f < n; ++f)
        for (std::size_t p = 0; p < plane; ++p)
          if (t.valid[f * plane + p]) {
            c.freq[std::size_t(t.labels[f * plane + p]) * plane + p] += 1;
            c.count[p] += 1;
          }
      break;
  }
  if (state_.window == 0 && !state_.history.empty()) {
    BlindContribution& acc = state_.history.front();
    for (std::size_t j = 0; j < c.count.size(); ++j) acc.count[j] += c.count[j];
    for (std::size_t j = 0; j < c.sum.size(); ++j) acc.sum[j] += c.sum[j];
    for (std::size_t j = 0; j < c.freq.size(); ++j) acc.freq[j] += c.freq[j];
    return;
  }
  state_.history.push_back(std::move(c));
  if (state_.window > 0)
    while (state_.history.size() > state_.window) state_.history.pop_front();
}

std::pair<Tensor, BlindState> blind_step(BlindPredictor& blind, const RawTarget& next_target) {
  Tensor prediction = blind.predict();
  blind.observe(next_target);
  return {std::move(prediction), blind.state()};
}

HeldOutSet::HeldOutSet(std::shared_ptr<const AnnotatedStream> stream, Task task, int n_frames,
                       int displacement, std::size_t max_examples) {
  StreamCursor cursor = StreamCursor::sequential(std::move(stream), task, n_frames, displacement);
  const auto& all = cursor.positions();
  if (all.empty()) throw ConfigError("held-out stream has no valid time steps");
  const std::size_t m = std::min(max_examples, all.size());
  for (std::size_t i = 0; i < m; ++i) positions_.push_back(all[i * all.size() / m]);
  for (const Position& p : positions_) examples_.push_back(cursor.make_example(p));
}

MetricValues out_of_stream_eval(const Predictor& predictor, const HeldOutSet& heldout,
                                const TaskCodec& codec) {
  if (heldout.examples().empty()) throw std::invalid_argument("empty held-out set");
  const auto names = task_metric_names(codec.task());
  std::vector<double> sums(names.size(), 0.0);
  std::vector<std::size_t> counts(names.size(), 0);
  for (const Example& ex : heldout.examples()) {
    const EncodedTarget enc = encode_target(codec, ex.target);
    const Tensor pred = predictor(ex.input.pixels);
    for (const auto& [name, value] : score_prediction(codec, pred, ex.target, enc)) {
      const auto k = std::size_t(std::find(names.begin(), names.end(), name) - names.begin());
      sums[k] += value;
      counts[k] += 1;
    }
  }
  MetricValues out;
  for (std::size_t k = 0; k < names.size(); ++k)
    if (counts[k]) out.emplace_back(names[k], sums[k] / double(counts[k]));
  return out;
}

double chance_miou(const std::vector<int>& gt, const std::vector<std::uint8_t>& valid,
                   int n_frames, const std::vector<double>& q) {
  const std::size_t plane = gt.size() / n_frames;
  const std::size_t C = q.size();
  double total = 0;
  std::size_t frames = 0;
  std::vector<double> p(C);
  for (int f = 0; f < n_frames; ++f) {
    std::fill(p.begin(), p.end(), 0.0);
    double n = 0;
    for (std::size_t i = f * plane; i < (f + 1) * plane; ++i)
      if (valid[i]) {
        p[std::size_t(gt[i])] += 1;
        n += 1;
      }
    if (n == 0) continue;
    double s = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (p[c] == 0) continue;
      const double pc = p[c] / n;
      const double denom = pc + q[c] - pc * q[c];
      s += denom > 0 ? pc * q[c] / denom : 0.0;
      ++present;
    }
    total += s / double(present);
    ++frames;
  }
  return frames ? total / double(frames) : 0.0;
}

}  // namespace onestream
