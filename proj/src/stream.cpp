#include "onestream/stream.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "onestream/errors.hpp"

namespace onestream {

std::string to_string(Task task) {
  switch (task) {
    case Task::pixels: return "pixels";
    case Task::segmentation: return "segmentation";
    case Task::depth: return "depth";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  for (auto t : {Task::pixels, Task::segmentation, Task::depth})
    if (to_string(t) == name) return t;
  throw ConfigError("unknown task '" + name + "'", "task.kind");
}

bool AnnotatedStream::has_labels() const {
  return !videos.empty() &&
         std::all_of(videos.begin(), videos.end(), [](const Video& v) { return !v.labels.empty(); });
}

bool AnnotatedStream::has_depth() const {
  return !videos.empty() && std::all_of(videos.begin(), videos.end(),
                                        [](const Video& v) { return !v.depth_mm.empty(); });
}

bool AnnotatedStream::has_channel(Task task) const {
  switch (task) {
    case Task::pixels: return !videos.empty();
    case Task::segmentation: return has_labels();
    case Task::depth: return has_depth();
  }
  return false;
}

std::size_t AnnotatedStream::total_frames() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.frames;
  return n;
}

void AnnotatedStream::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("stream resolution must be positive");
  const std::size_t plane = std::size_t(height) * width;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const Video& v = videos[i];
    const std::string where = "video " + std::to_string(i);
    if (v.rgb.size() != v.frames * 3 * plane) throw ConfigError(where + ": rgb size mismatch");
    if (!v.labels.empty()) {
      if (v.labels.size() != v.frames * plane) throw ConfigError(where + ": label size mismatch");
      for (auto l : v.labels)
        if (l < -1 || l >= num_classes)
          throw ConfigError(where + ": class id " + std::to_string(l) + " outside [0, " +
                            std::to_string(num_classes) + ")");
    }
    if (!v.depth_mm.empty() && v.depth_mm.size() != v.frames * plane)
      throw ConfigError(where + ": depth size mismatch");
  }
}

void SyntheticConfig::validate() const {
  if (videos < 1) throw ConfigError("must be positive", "stream.synthetic.videos");
  if (frames_per_video < 1) throw ConfigError("must be positive", "stream.synthetic.frames_per_video");
  if (resolution < 1) throw ConfigError("must be positive", "resolution");
  if (shapes < 0) throw ConfigError("must be >= 0", "stream.synthetic.shapes");
  if (classes < 1 || classes > 255) throw ConfigError("must be in [1, 255]", "stream.synthetic.classes");
  if (shapes == 0 && classes > 1)
    throw ConfigError("zero shapes cannot populate more than one class", "stream.synthetic.shapes");
  if (shapes > 0 && classes < 2)
    throw ConfigError("shapes need at least one non-background class", "stream.synthetic.classes");
  if (!std::isfinite(velocity_min) || !std::isfinite(velocity_max) || velocity_min < 0 ||
      velocity_max < velocity_min)
    throw ConfigError("need 0 <= velocity_min <= velocity_max", "stream.synthetic.velocity_max");
  if (!(size_min > 0 && size_max >= size_min && size_max <= 1))
    throw ConfigError("need 0 < size_min <= size_max <= 1", "stream.synthetic.size_max");
  if (!std::isfinite(background_drift)) throw ConfigError("must be finite", "stream.synthetic.background_drift");
  if (!(depth_min > 0 && depth_max > depth_min && depth_max < 65.0))
    throw ConfigError("need 0 < depth_min < depth_max < 65", "stream.synthetic.depth_max");
  if (depth_layers < 1) throw ConfigError("must be positive", "stream.synthetic.depth_layers");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::array<double, 3> hsv(double h, double s, double v) {
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Shape2D {
  int class_id;
  bool circle;
  std::array<double, 3> color;
  double half;  // half side / radius in pixels
  double x, y, vx, vy;
  double depth;
};

// Reflects a coordinate back into [lo, hi], flipping the velocity.
void reflect(double& p, double& v, double lo, double hi) {
  if (hi <= lo) {
    p = (lo + hi) / 2;
    return;
  }
  for (int guard = 0; guard < 4 && (p < lo || p > hi); ++guard) {
    if (p < lo) {
      p = 2 * lo - p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
  }
  p = std::clamp(p, lo, hi);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Video render_video(const SyntheticConfig& cfg, Rng& rng) {
  const int R = cfg.resolution;
  const std::size_t plane = std::size_t(R) * R;
  Video v;
  v.frames = cfg.frames_per_video;
  v.rgb.resize(v.frames * 3 * plane);
  v.labels.resize(v.frames * plane);
  v.depth_mm.resize(v.frames * plane);

  // Low-saturation background with a sinusoidal pattern whose phase drifts.
  const auto base = hsv(rng.uniform(), rng.uniform(0.05, 0.3), rng.uniform(0.25, 0.75));
  const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
  const double phase0 = rng.uniform(0.0, kTwoPi);
  const double amp = 0.08;

  std::vector<Shape2D> shapes(cfg.shapes);
  for (auto& s : shapes) {
    s.class_id = 1 + static_cast<int>(rng.below(cfg.classes - 1));
    s.circle = ((s.class_id - 1) % 2) == 1;
    s.color = synthetic_class_color(s.class_id, cfg.classes);
    s.half = 0.5 * R * rng.uniform(cfg.size_min, cfg.size_max);
    s.x = rng.uniform(s.half, R - s.half);
    s.y = rng.uniform(s.half, R - s.half);
    const double speed = rng.uniform(cfg.velocity_min, cfg.velocity_max);
    const double angle = rng.uniform(0.0, kTwoPi);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    const int layer = static_cast<int>(rng.below(cfg.depth_layers));
    s.depth = cfg.depth_min + (cfg.depth_max - cfg.depth_min) * layer / cfg.depth_layers;
  }
  // Paint far to near; stable order keeps ties deterministic (later wins).
  std::vector<std::size_t> order(shapes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return shapes[a].depth > shapes[b].depth; });

  const auto bg_depth = static_cast<std::uint16_t>(std::lround(cfg.depth_max * 1000.0));
  for (std::size_t f = 0; f < v.frames; ++f) {
    std::uint8_t* rgb = v.rgb.data() + f * 3 * plane;
    std::int16_t* lab = v.labels.data() + f * plane;
    std::uint16_t* dep = v.depth_mm.data() + f * plane;
    const double phase = phase0 + cfg.background_drift * double(f);
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        const double wave = std::sin(kTwoPi * (fx * (x + 0.5) + fy * (y + 0.5)) / R + phase);
        std::array<double, 3> c = base;
        for (int ch = 0; ch < 3; ++ch) c[ch] += amp * wave * (ch == 1 ? -1.0 : 1.0);
        int label = 0;
        double depth = cfg.depth_max;
        for (std::size_t idx : order) {
          const Shape2D& s = shapes[idx];
          const double dx = (x + 0.5) - s.x, dy = (y + 0.5) - s.y;
          const bool inside = s.circle ? (dx * dx + dy * dy <= s.half * s.half)
                                       : (std::abs(dx) <= s.half && std::abs(dy) <= s.half);
          if (inside) {
            c = s.color;
            label = s.class_id;
            depth = s.depth;
          }
        }
        const std::size_t p = std::size_t(y) * R + x;
        for (int ch = 0; ch < 3; ++ch) rgb[ch * plane + p] = quantize(c[ch]);
        lab[p] = static_cast<std::int16_t>(label);
        dep[p] = label == 0 ? bg_depth : static_cast<std::uint16_t>(std::lround(depth * 1000.0));
      }
    for (auto& s : shapes) {
      s.x += s.vx;
      s.y += s.vy;
      reflect(s.x, s.vx, s.half, R - s.half);
      reflect(s.y, s.vy, s.half, R - s.half);
    }
  }
  return v;
}

}  // namespace

std::array<double, 3> synthetic_class_color(int class_id, int num_classes) {
  const int colors = std::max(1, num_classes / 2);
  const int color = (class_id - 1) / 2;
  return hsv(double(color) / colors, 0.85, 0.95);
}

AnnotatedStream synth_stream(const SyntheticConfig& config) {
  config.validate();
  AnnotatedStream s;
  s.height = s.width = config.resolution;
  s.num_classes = config.classes;
  s.videos.reserve(config.videos);
  for (int i = 0; i < config.videos; ++i) {
    Rng rng(Rng::mix(config.seed, 1000 + i));
    s.videos.push_back(render_video(config, rng));
  }
  return s;
}

std::vector<Position> valid_positions(const AnnotatedStream& stream, int n_frames,
                                      int displacement) {
  if (n_frames < 1) throw ConfigError("must be >= 1", "task.n_frames");
  if (displacement < 0) throw ConfigError("must be >= 0", "task.displacement");
  std::vector<Position> out;
  const std::size_t n = n_frames;
  const std::size_t need = n * (std::size_t(displacement) + 1);
  for (std::size_t v = 0; v < stream.videos.size(); ++v)
    for (std::size_t f = 0; f + need <= stream.videos[v].frames; f += n) out.push_back({v, f});
  return out;
}

TimeStep read_time_step(const AnnotatedStream& stream, Position pos, int n_frames) {
  const std::size_t H = stream.height, W = stream.width, plane = H * W;
  const Video& v = stream.videos.at(pos.video);
  if (pos.frame + n_frames > v.frames) throw std::out_of_range("time step past video end");
  TimeStep ts;
  ts.pixels = Tensor({3 * std::size_t(n_frames), H, W});
  ts.video = pos.video;
  ts.first_frame = pos.frame;
  ts.n_frames = n_frames;
  const std::uint8_t* src = v.rgb.data() + pos.frame * 3 * plane;
  for (std::size_t i = 0; i < ts.pixels.size(); ++i) ts.pixels[i] = Real(src[i]) / Real(255);
  return ts;
}

RawTarget read_target(const AnnotatedStream& stream, Task task, Position pos, int n_frames) {
  if (!stream.has_channel(task))
    throw ConfigError("stream has no " + to_string(task) + " channel", "task.kind");
  const std::size_t H = stream.height, W = stream.width, plane = H * W;
  const Video& v = stream.videos.at(pos.video);
  RawTarget t;
  t.task = task;
  t.video = pos.video;
  t.first_frame = pos.frame;
  t.n_frames = n_frames;
  t.height = stream.height;
  t.width = stream.width;
  const std::size_t count = std::size_t(n_frames) * plane;
  switch (task) {
    case Task::pixels:
      t.rgb = read_time_step(stream, pos, n_frames).pixels;
      break;
    case Task::segmentation: {
      t.labels.resize(count);
      t.valid.resize(count);
      const std::int16_t* src = v.labels.data() + pos.frame * plane;
      for (std::size_t i = 0; i < count; ++i) {
        t.labels[i] = src[i];
        t.valid[i] = src[i] >= 0;
      }
      break;
    }
    case Task::depth: {
      t.depth = Tensor({std::size_t(n_frames), H, W});
      t.valid.resize(count);
      const std::uint16_t* src = v.depth_mm.data() + pos.frame * plane;
      for (std::size_t i = 0; i < count; ++i) {
        t.depth[i] = Real(src[i]) / Real(1000);
        t.valid[i] = src[i] != 0;
      }
      break;
    }
  }
  return t;
}

StreamCursor::StreamCursor(std::shared_ptr<const AnnotatedStream> stream, Task task,
                           int n_frames, int displacement, CursorMode mode, std::uint64_t seed)
    : stream_(std::move(stream)),
      task_(task),
      n_frames_(n_frames),
      displacement_(displacement),
      mode_(mode),
      rng_(seed) {
  if (!stream_) throw ConfigError("cursor needs a stream");
  if (!stream_->has_channel(task_))
    throw ConfigError("stream has no " + to_string(task_) + " channel", "task.kind");
  positions_ = valid_positions(*stream_, n_frames_, displacement_);
}

StreamCursor StreamCursor::sequential(std::shared_ptr<const AnnotatedStream> stream, Task task,
                                      int n_frames, int displacement) {
  return StreamCursor(std::move(stream), task, n_frames, displacement, CursorMode::sequential, 0);
}

StreamCursor StreamCursor::iid(std::shared_ptr<const AnnotatedStream> stream, Task task,
                               int n_frames, int displacement, std::uint64_t seed) {
  StreamCursor c(std::move(stream), task, n_frames, displacement, CursorMode::iid, seed);
  if (c.positions_.empty()) throw ConfigError("stream has no valid time steps for IID sampling");
  return c;
}

StreamCursor iid_sampler(std::shared_ptr<const AnnotatedStream> stream, int displacement,
                         Task task, std::uint64_t seed, int n_frames) {
  return StreamCursor::iid(std::move(stream), task, n_frames, displacement, seed);
}

std::optional<Position> StreamCursor::next_position() {
  if (mode_ == CursorMode::iid) return positions_[rng_.below(positions_.size())];
  if (next_ >= positions_.size()) return std::nullopt;
  return positions_[next_++];
}

Example StreamCursor::make_example(Position pos) const {
  Example ex;
  ex.input = read_time_step(*stream_, pos, n_frames_);
  const Position target{pos.video, pos.frame + std::size_t(n_frames_) * displacement_};
  ex.target = read_target(*stream_, task_, target, n_frames_);
  return ex;
}

std::optional<Example> StreamCursor::next() {
  auto pos = next_position();
  if (!pos) return std::nullopt;
  return make_example(*pos);
}

std::string StreamCursor::save_state() const {
  return mode_ == CursorMode::iid ? rng_.serialize() : std::to_string(next_);
}

void StreamCursor::load_state(const std::string& state) {
  if (mode_ == CursorMode::iid) rng_.deserialize(state);
  else next_ = std::stoull(state);
}

std::string to_string(AugmentMode mode) {
  return mode == AugmentMode::per_step ? "per_step" : "per_video";
}

AugmentMode parse_augment_mode(const std::string& name) {
  if (name == "per_step") return AugmentMode::per_step;
  if (name == "per_video") return AugmentMode::per_video;
  throw ConfigError("unknown augmentation mode '" + name + "'", "augment.mode");
}

void AugmentConfig::validate() const {
  if (!(crop_fraction > 0 && crop_fraction <= 1))
    throw ConfigError("must be in (0, 1]", "augment.crop_fraction");
  if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("must be in [0, 1]", "augment.flip_prob");
}

namespace {

// Source coordinate of output pixel (y, x) under `t` for an H x W frame.
struct SourceMap {
  std::vector<int> ys, xs;
  SourceMap(const Transform& t, int h, int w) : ys(h), xs(w) {
    for (int y = 0; y < h; ++y) ys[y] = t.offset_y + int(std::int64_t(y) * t.crop_h / h);
    for (int x = 0; x < w; ++x) {
      const int xx = t.flip ? (w - 1 - x) : x;
      xs[x] = t.offset_x + int(std::int64_t(xx) * t.crop_w / w);
    }
  }
};

Tensor remap_planes(const Tensor& src, const SourceMap& m) {
  Tensor out(src.shape());
  const std::size_t c = src.dim(0), h = src.dim(1), w = src.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(ch, y, x) = src.at(ch, m.ys[y], m.xs[x]);
  return out;
}

template <class T>
std::vector<T> remap_vector(const std::vector<T>& src, std::size_t planes, int h, int w,
                            const SourceMap& m) {
  std::vector<T> out(src.size());
  const std::size_t plane = std::size_t(h) * w;
  for (std::size_t p = 0; p < planes; ++p)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[p * plane + std::size_t(y) * w + x] = src[p * plane + std::size_t(m.ys[y]) * w + m.xs[x]];
  return out;
}

}  // namespace

Example apply_transform(const Example& ex, const Transform& t) {
  const int h = static_cast<int>(ex.input.pixels.dim(1));
  const int w = static_cast<int>(ex.input.pixels.dim(2));
  const SourceMap m(t, h, w);
  Example out = ex;
  out.input.pixels = remap_planes(ex.input.pixels, m);
  RawTarget& tg = out.target;
  const std::size_t planes = std::size_t(tg.n_frames);
  if (!tg.rgb.empty()) tg.rgb = remap_planes(ex.target.rgb, m);
  if (!tg.depth.empty()) tg.depth = remap_planes(ex.target.depth, m);
  if (!tg.labels.empty()) tg.labels = remap_vector(ex.target.labels, planes, h, w, m);
  if (!tg.valid.empty()) tg.valid = remap_vector(ex.target.valid, planes, h, w, m);
  return out;
}

Augmenter::Augmenter(AugmentConfig config, int displacement, std::uint64_t seed)
    : config_(config), rng_(seed) {
  config_.validate();
  if (displacement > 0)
    throw ConfigError("augmentation is only supported for displacement 0", "augment.enabled");
}

Transform Augmenter::draw(std::size_t video, int height, int width) {
  if (config_.mode == AugmentMode::per_video && current_video_ && current_video_->video == video)
    return *current_video_;
  Transform t;
  t.video = video;
  t.crop_h = std::max(1, int(std::lround(config_.crop_fraction * height)));
  t.crop_w = std::max(1, int(std::lround(config_.crop_fraction * width)));
  t.offset_y = static_cast<int>(rng_.below(std::uint64_t(height - t.crop_h + 1)));
  t.offset_x = static_cast<int>(rng_.below(std::uint64_t(width - t.crop_w + 1)));
  t.flip = config_.flip_prob > 0 && rng_.bernoulli(config_.flip_prob);
  if (config_.mode == AugmentMode::per_video) current_video_ = t;
  return t;
}

Example Augmenter::apply(const Example& ex) {
  const Transform t = draw(ex.input.video, static_cast<int>(ex.input.pixels.dim(1)),
                           static_cast<int>(ex.input.pixels.dim(2)));
  log_.push_back(t);
  return apply_transform(ex, t);
}

std::string Augmenter::save_state() const {
  std::ostringstream out;
  out << rng_.serialize() << '|';
  if (current_video_) {
    const Transform& t = *current_video_;
    out << t.video << ' ' << t.crop_h << ' ' << t.crop_w << ' ' << t.offset_y << ' '
        << t.offset_x << ' ' << int(t.flip);
  }
  return out.str();
}

void Augmenter::load_state(const std::string& state) {
  const auto bar = state.find('|');
  if (bar == std::string::npos) throw IoError("corrupt augmenter state");
  rng_.deserialize(state.substr(0, bar));
  std::istringstream in(state.substr(bar + 1));
  Transform t;
  int flip = 0;
  if (in >> t.video >> t.crop_h >> t.crop_w >> t.offset_y >> t.offset_x >> flip) {
    t.flip = flip != 0;
    current_video_ = t;
  } else {
    current_video_.reset();
  }
}

}  // namespace onestream
