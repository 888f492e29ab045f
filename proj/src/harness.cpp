#include "onestream/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "onestream/checkpoint.hpp"
#include "onestream/corruption.hpp"
#include "onestream/diagnostics.hpp"
#include "onestream/errors.hpp"
#include "onestream/frame_io.hpp"
#include "onestream/model.hpp"
#include "onestream/optim.hpp"
#include "onestream/replay.hpp"

namespace onestream {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCsvHeader = "step,metric,split,value\n";
constexpr const char* kInStream = "in_stream";
constexpr const char* kOutOfStream = "out_of_stream";

class Csv {
 public:
  // With `resume_size`, the file is truncated to that many bytes and
  // appended to; otherwise it is recreated with the header.
  Csv(fs::path path, std::optional<std::uintmax_t> resume_size) : path_(std::move(path)) {
    if (resume_size) {
      if (!fs::exists(path_) || fs::file_size(path_) < *resume_size)
        throw IoError(fmt::format("{} is shorter than the checkpoint expects", path_.string()));
      fs::resize_file(path_, *resume_size);
      out_.open(path_, std::ios::binary | std::ios::app);
    } else {
      out_.open(path_, std::ios::binary | std::ios::trunc);
      out_ << kCsvHeader;
    }
    if (!out_) throw IoError("cannot write " + path_.string());
  }

  void row(std::int64_t step, const std::string& metric, const char* split, double value) {
    out_ << fmt::format("{},{},{},{:.17g}\n", step, metric, split, value);
  }

  std::uintmax_t size() {
    out_.flush();
    if (!out_) throw IoError("failed writing " + path_.string());
    return fs::file_size(path_);
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string hex(double v) { return fmt::format("{:a}", v); }

double unhex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw IoError("malformed number in checkpoint: " + s);
  return v;
}

// Running sums of in-stream quantities between log rows, in a fixed order.
class IntervalMeans {
 public:
  explicit IntervalMeans(std::vector<std::string> names)
      : names_(std::move(names)), sum_(names_.size(), 0.0), count_(names_.size(), 0) {}

  void add(const std::string& name, double v) {
    const auto k = index(name);
    sum_[k] += v;
    ++count_[k];
  }

  bool pending() const {
    return std::any_of(count_.begin(), count_.end(), [](std::int64_t c) { return c > 0; });
  }

  void flush(Csv& csv, std::int64_t step) {
    for (std::size_t k = 0; k < names_.size(); ++k) {
      if (count_[k] == 0) continue;
      csv.row(step, names_[k], kInStream, sum_[k] / double(count_[k]));
      sum_[k] = 0;
      count_[k] = 0;
    }
  }

  std::string save() const {
    std::string out;
    for (std::size_t k = 0; k < names_.size(); ++k) out += hex(sum_[k]) + ' ' + std::to_string(count_[k]) + ' ';
    return out;
  }

  void load(const std::string& s) {
    std::istringstream in(s);
    for (std::size_t k = 0; k < names_.size(); ++k) {
      std::string v;
      if (!(in >> v >> count_[k])) throw IoError("malformed interval state in checkpoint");
      sum_[k] = unhex(v);
    }
  }

 private:
  std::size_t index(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw std::logic_error("unregistered metric " + name);
    return std::size_t(it - names_.begin());
  }

  std::vector<std::string> names_;
  std::vector<double> sum_;
  std::vector<std::int64_t> count_;
};

struct ReplayKey {
  Position position;
  std::optional<Transform> transform;
};

std::string save_keys(const std::vector<ReplayKey>& keys) {
  std::ostringstream out;
  for (const ReplayKey& k : keys) {
    out << k.position.video << ' ' << k.position.frame << ' ' << int(k.transform.has_value());
    if (k.transform) {
      const Transform& t = *k.transform;
      out << ' ' << t.video << ' ' << t.crop_h << ' ' << t.crop_w << ' ' << t.offset_y << ' ' << t.offset_x
          << ' ' << int(t.flip);
    }
    out << ' ';
  }
  return out.str();
}

std::vector<ReplayKey> load_keys(const std::string& s, std::size_t count) {
  std::istringstream in(s);
  std::vector<ReplayKey> keys(count);
  for (ReplayKey& k : keys) {
    int has = 0;
    if (!(in >> k.position.video >> k.position.frame >> has)) throw IoError("malformed replay keys");
    if (has) {
      Transform t;
      int flip = 0;
      if (!(in >> t.video >> t.crop_h >> t.crop_w >> t.offset_y >> t.offset_x >> flip))
        throw IoError("malformed replay keys");
      t.flip = flip != 0;
      k.transform = t;
    }
  }
  return keys;
}

std::string model_summary(const ModelConfig& m) {
  return fmt::format(
      "kind={} n_frames={} resolution={} width={} depth={} levels={} patch={} attention={} groups={} "
      "residual={} identity_init={}",
      to_string(m.kind), m.n_frames, m.resolution, m.width, m.depth, m.levels, m.patch, int(m.attention),
      m.groups, int(m.residual), int(m.identity_init));
}

void check_divergence(Real loss, std::int64_t step) {
  if (!std::isfinite(double(loss)) || double(loss) > kDivergenceLoss)
    throw NumericError(fmt::format("training diverged at step {} (loss {})", step, double(loss)));
}

void scale_in_place(GradSet& g, Real s) {
  for (auto& [name, t] : g)
    for (Real& v : t.data()) v *= s;
}

// Phase 0: IID future prediction on the training stream with guided,
// masked or vanilla corruption of the input frames.
ParamSet pretrain(const ExperimentConfig& cfg, const ModelConfig& model, ParamSet params,
                  std::shared_ptr<const AnnotatedStream> stream, Csv& log) {
  const int displacement = std::max(1, cfg.displacement);
  StreamCursor cursor = StreamCursor::iid(std::move(stream), Task::pixels, cfg.n_frames, displacement,
                                          Rng::mix(cfg.seed, 0x9e7));
  OptimizerConfig opt = OptimizerConfig::defaults_for(OptimizerKind::adamw);
  opt.lr = Real(2e-4);
  opt.weight_decay = Real(0.05);
  LRSchedule schedule;
  schedule.kind = ScheduleKind::constant;
  schedule.base = opt.lr;
  schedule.total = cfg.pretrain_steps;
  schedule.warmup = cfg.pretrain_steps / 10;
  OptimizerState state;
  Rng rng(cfg.corruption.seed);
  IntervalMeans means({"loss"});
  for (std::int64_t t = 0; t < cfg.pretrain_steps; ++t) {
    const Example ex = *cursor.next();
    const Corrupted input = corrupt(ex.input.pixels, ex.target.rgb, cfg.corruption, rng);
    const Tensor mask({std::size_t(cfg.n_frames), ex.target.rgb.dim(1), ex.target.rgb.dim(2)}, Real(1));
    LossAndGrad lg = value_and_grad(model, params, input.clip, ex.target.rgb, mask);
    check_divergence(lg.loss, t + 1);
    optimizer_step(opt, state, params, lg.grads, lr_at(schedule, t + 1));
    means.add("loss", double(lg.loss));
    if ((t + 1) % cfg.log_interval == 0 || t + 1 == cfg.pretrain_steps) means.flush(log, t + 1);
  }
  return params;
}

}  // namespace

std::shared_ptr<const AnnotatedStream> load_stream(const StreamSpec& spec, int resolution,
                                                   const std::string& field) {
  auto stream = std::make_shared<AnnotatedStream>(spec.source == StreamSource::synthetic
                                                      ? synth_stream(spec.synthetic)
                                                      : read_frame_directory(spec.path));
  if (stream->height != resolution || stream->width != resolution)
    throw ConfigError(fmt::format("stream is {}x{} but resolution is {}", stream->height, stream->width,
                                  resolution),
                      field);
  return stream;
}

TaskCodec make_codec(const ExperimentConfig& cfg, int num_classes) {
  Colormap seg = cfg.segmentation_colormap.empty() ? Colormap::nyu40(std::clamp(num_classes, 1, 40))
                                                   : Colormap::load(cfg.segmentation_colormap);
  if (cfg.task == Task::segmentation && int(seg.size()) < num_classes)
    throw ConfigError(fmt::format("colormap has {} entries for {} classes", seg.size(), num_classes),
                      "task.segmentation_colormap");
  Colormap depth = cfg.depth_colormap.empty() ? Colormap::viridis() : Colormap::load(cfg.depth_colormap);
  return TaskCodec(cfg.task, std::move(seg), std::move(depth), Real(cfg.max_depth));
}

RunLog run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const bool network = cfg.learner == Learner::network;
  const bool training = network && cfg.optimizer_enabled;
  const bool replay_on = cfg.replay_capacity > 0;
  const std::size_t batch = replay_on ? cfg.replay_batch_size : 1;
  const std::int64_t iterations = cfg.iterations();

  auto stream = load_stream(cfg.stream, cfg.resolution, "stream");
  if (!stream->has_channel(cfg.task))
    throw ConfigError("training stream has no " + to_string(cfg.task) + " annotations", "task.kind");
  const TaskCodec codec = make_codec(cfg, stream->num_classes);

  const bool evaluate = cfg.eval_interval > 0 && !options.skip_out_of_stream;
  std::optional<HeldOutSet> heldout;
  if (evaluate) {
    auto held = load_stream(cfg.heldout, cfg.resolution, "heldout");
    if (!held->has_channel(cfg.task))
      throw ConfigError("held-out stream has no " + to_string(cfg.task) + " annotations", "heldout");
    heldout.emplace(held, cfg.task, cfg.n_frames, cfg.displacement, cfg.eval_max_examples);
  }

  RunLog log;
  log.output_dir = cfg.output_dir;
  fs::create_directories(log.output_dir / "checkpoints");
  log.metrics_csv = log.output_dir / "metrics.csv";
  log.diagnostics_csv = log.output_dir / "diagnostics.csv";
  log.config_snapshot = log.output_dir / "config.resolved.yaml";
  {
    std::ofstream snap(log.config_snapshot, std::ios::binary | std::ios::trunc);
    snap << emit_config(cfg);
    if (!snap) throw IoError("cannot write " + log.config_snapshot.string());
  }

  ModelConfig model = cfg.model;
  model.seed = Rng::mix(cfg.seed, cfg.model.seed);

  StreamCursor cursor = cfg.stream_mode == CursorMode::sequential
                            ? StreamCursor::sequential(stream, cfg.task, cfg.n_frames, cfg.displacement)
                            : StreamCursor::iid(stream, cfg.task, cfg.n_frames, cfg.displacement,
                                                Rng::mix(cfg.seed, 0x5eed));
  std::optional<Augmenter> augmenter;
  if (cfg.augment_enabled) augmenter.emplace(cfg.augment, cfg.displacement, Rng::mix(cfg.seed, 0xa06));

  ParamSet params;
  OptimizerState opt_state;
  Accumulator accumulator(cfg.steps_per_update);
  AnchorState anchor{{}, Real(cfg.anchor_strength), cfg.anchor_refresh_interval};
  std::optional<GradSet> prev_grad;
  ReplayBuffer<ReplayKey> replay(std::max<std::size_t>(1, cfg.replay_capacity));
  Rng replay_rng(Rng::mix(cfg.seed, 0x4e91));
  BlindPredictor blind(codec, cfg.n_frames, cfg.resolution, cfg.resolution, cfg.blind_window);

  std::vector<std::string> names = task_metric_names(cfg.task);
  if (training) names.insert(names.end(), {"loss", "grad_norm", "grad_cosine"});
  IntervalMeans means(names);

  std::int64_t start = 0;
  std::optional<std::uintmax_t> metrics_size, diagnostics_size;
  if (!options.resume_from.empty()) {
    const Checkpoint ck = read_checkpoint(options.resume_from);
    if (ck.require("config") != emit_config(cfg))
      throw ConfigError("checkpoint " + options.resume_from.string() + " was written by a different config");
    start = std::stoll(ck.require("step"));
    metrics_size = std::stoull(ck.require("csv.metrics"));
    diagnostics_size = std::stoull(ck.require("csv.diagnostics"));
    cursor.load_state(ck.require("cursor"));
    if (augmenter) augmenter->load_state(ck.require("augmenter"));
    means.load(ck.require("log.means"));
    if (network) params = ck.with_prefix("param.");
    if (training) {
      opt_state.step = std::stoll(ck.require("opt.step"));
      opt_state.first = ck.with_prefix("opt.m.");
      opt_state.second = ck.with_prefix("opt.v.");
      const int count = std::stoi(ck.require("acc.count"));
      if (count > 0) accumulator.restore(ck.with_prefix("acc.sum."), count);
      anchor.anchor = ck.with_prefix("anchor.");
      if (ck.require("diag.prev") == "1") prev_grad = ck.with_prefix("diag.prev.");
      replay_rng.deserialize(ck.require("replay.rng"));
      if (replay_on) {
        const std::size_t stored = std::stoull(ck.require("replay.size"));
        replay.restore(load_keys(ck.require("replay.keys"), stored), std::stoull(ck.require("replay.pushed")));
      }
    }
    if (cfg.learner == Learner::blind) {
      BlindState bs;
      bs.window = cfg.blind_window;
      const std::size_t n = std::stoull(ck.require("blind.history"));
      for (std::size_t i = 0; i < n; ++i) {
        const std::string p = fmt::format("blind.{}.", i);
        BlindContribution c;
        c.count = ck.tensors.at(p + "count");
        if (ck.tensors.contains(p + "sum")) c.sum = ck.tensors.at(p + "sum");
        if (ck.tensors.contains(p + "freq")) c.freq = ck.tensors.at(p + "freq");
        bs.history.push_back(std::move(c));
      }
      blind.restore(std::move(bs));
    }
    if (cfg.pretrain_enabled) log.pretrain_csv = log.output_dir / "pretrain.csv";
  } else if (network) {
    if (!cfg.init_checkpoint.empty()) {
      params = read_checkpoint(cfg.init_checkpoint).with_prefix("param.");
      params.require_same_layout(build_model(model), "init_checkpoint parameters");
    } else {
      params = build_model(model);
    }
    if (cfg.pretrain_enabled) {
      log.pretrain_csv = log.output_dir / "pretrain.csv";
      Csv pre(log.pretrain_csv, std::nullopt);
      params = pretrain(cfg, model, std::move(params), stream, pre);
      pre.size();
      Checkpoint ck;
      ck.set("phase", "pretrain");
      ck.set("model", model_summary(model));
      ck.insert_with_prefix("param.", params);
      const fs::path path = log.output_dir / "checkpoints" / "pretrain.ckpt";
      write_checkpoint(path, ck);
      log.checkpoints.push_back(path);
    }
  }

  Csv metrics(log.metrics_csv, metrics_size);
  Csv diagnostics(log.diagnostics_csv, diagnostics_size);

  auto materialize = [&](const ReplayKey& key) {
    Example ex = cursor.make_example(key.position);
    return key.transform ? apply_transform(ex, *key.transform) : ex;
  };

  auto save = [&](const fs::path& path, std::int64_t step) {
    Checkpoint ck;
    ck.set("config", emit_config(cfg));
    ck.set("phase", "stream");
    ck.set("learner", to_string(cfg.learner));
    if (network) ck.set("model", model_summary(model));
    ck.set("step", std::to_string(step));
    ck.set("cursor", cursor.save_state());
    if (augmenter) ck.set("augmenter", augmenter->save_state());
    ck.set("log.means", means.save());
    ck.set("csv.metrics", std::to_string(metrics.size()));
    ck.set("csv.diagnostics", std::to_string(diagnostics.size()));
    if (network) ck.insert_with_prefix("param.", params);
    if (training) {
      ck.set("opt.step", std::to_string(opt_state.step));
      ck.insert_with_prefix("opt.m.", opt_state.first);
      ck.insert_with_prefix("opt.v.", opt_state.second);
      ck.set("acc.count", std::to_string(accumulator.count()));
      if (accumulator.count() > 0) ck.insert_with_prefix("acc.sum.", accumulator.sum());
      ck.insert_with_prefix("anchor.", anchor.anchor);
      ck.set("diag.prev", prev_grad ? "1" : "0");
      if (prev_grad) ck.insert_with_prefix("diag.prev.", *prev_grad);
      ck.set("replay.rng", replay_rng.serialize());
      if (replay_on) {
        ck.set("replay.size", std::to_string(replay.size()));
        ck.set("replay.pushed", std::to_string(replay.total_pushed()));
        ck.set("replay.keys", save_keys(replay.contents()));
      }
    }
    if (cfg.learner == Learner::blind) {
      const BlindState& bs = blind.state();
      ck.set("blind.history", std::to_string(bs.history.size()));
      for (std::size_t i = 0; i < bs.history.size(); ++i) {
        const std::string p = fmt::format("blind.{}.", i);
        ck.tensors.insert(p + "count", bs.history[i].count);
        if (!bs.history[i].sum.empty()) ck.tensors.insert(p + "sum", bs.history[i].sum);
        if (!bs.history[i].freq.empty()) ck.tensors.insert(p + "freq", bs.history[i].freq);
      }
    }
    write_checkpoint(path, ck);
    log.checkpoints.push_back(path);
  };

  auto predictor = [&]() -> Predictor {
    switch (cfg.learner) {
      case Learner::network: return [&](const Tensor& x) { return predict(model, params, x); };
      case Learner::blind: return [&](const Tensor&) { return blind.predict(); };
      case Learner::copy_input: return [](const Tensor& x) { return x; };
    }
    return {};
  }();

  std::int64_t t = start;
  for (; t < iterations; ++t) {
    if (options.stop_after > 0 && t >= options.stop_after) {
      log.iterations = t;
      return log;
    }
    const std::int64_t step = t + 1;
    const auto pos = cursor.next_position();
    if (!pos) {
      log.stream_ended = true;
      break;
    }
    ReplayKey key{*pos, std::nullopt};
    Example ex = cursor.make_example(*pos);
    if (augmenter) {
      key.transform = augmenter->draw(pos->video, cfg.resolution, cfg.resolution);
      ex = apply_transform(ex, *key.transform);
    }
    const EncodedTarget enc = encode_target(codec, ex.target);

    Tensor prediction;
    if (training) {
      LossAndGrad lg;
      if (!replay_on) {
        lg = value_and_grad(model, params, ex.input.pixels, enc.rgb, enc.mask);
        prediction = std::move(lg.prediction);
      } else {
        prediction = predict(model, params, ex.input.pixels);
        replay.push(key);
        for (const ReplayKey& k : replay.sample(batch, replay_rng)) {
          const Example item = materialize(k);
          const EncodedTarget item_enc = encode_target(codec, item.target);
          LossAndGrad one = value_and_grad(model, params, item.input.pixels, item_enc.rgb, item_enc.mask);
          if (lg.grads.empty()) {
            lg.grads = std::move(one.grads);
          } else {
            add_in_place(lg.grads, one.grads);
          }
          lg.loss += one.loss;
        }
        lg.loss /= Real(batch);
        scale_in_place(lg.grads, Real(1) / Real(batch));
      }
      check_divergence(lg.loss, step);
      means.add("loss", double(lg.loss));

      if (cfg.diagnostics_interval > 0) {
        const double norm = grad_norm(lg.grads);
        means.add("grad_norm", norm);
        std::optional<double> cosine;
        if (prev_grad) {
          cosine = grad_cosine(*prev_grad, lg.grads);
          means.add("grad_cosine", *cosine);
        }
        if (step % cfg.diagnostics_interval == 0) {
          diagnostics.row(step, "grad_norm", kInStream, norm);
          if (cosine) diagnostics.row(step, "grad_cosine", kInStream, *cosine);
        }
        prev_grad = lg.grads;
      }

      GradSet grads = std::move(lg.grads);
      if (anchor.strength > 0) {
        if (anchor.anchor.empty() || t % anchor.refresh_interval == 0) anchor.anchor = params;
        add_in_place(grads, anchor_penalty_grad(params, anchor));
      }
      if (auto mean = accumulator.add(grads))
        optimizer_step(cfg.optimizer, opt_state, params, *mean, lr_at(cfg.schedule, step));
    } else {
      prediction = predictor(ex.input.pixels);
      if (cfg.learner == Learner::blind) blind.observe(ex.target);
    }

    for (const auto& [name, value] : score_prediction(codec, prediction, ex.target, enc)) means.add(name, value);
    if (step % cfg.log_interval == 0) means.flush(metrics, step);

    if (evaluate && step % cfg.eval_interval == 0)
      for (const auto& [name, value] : out_of_stream_eval(predictor, *heldout, codec))
        metrics.row(step, name, kOutOfStream, value);

    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0)
      save(log.output_dir / "checkpoints" / fmt::format("step_{:08d}.ckpt", step), step);
  }
  log.iterations = t;
  if (means.pending()) means.flush(metrics, t);
  log.final_checkpoint = log.output_dir / "checkpoints" / "final.ckpt";
  save(log.final_checkpoint, t);
  return log;
}

CheckpointEval evaluate_checkpoint(const fs::path& checkpoint, const fs::path& stream_root) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  if (ck.get("phase") != "stream") throw ConfigError("not a streaming-phase checkpoint: " + checkpoint.string());
  ExperimentConfig cfg = parse_config(ck.require("config"));
  StreamSpec spec;
  spec.source = StreamSource::directory;
  spec.path = stream_root.string();
  auto stream = load_stream(spec, cfg.resolution, "stream");
  if (!stream->has_channel(cfg.task))
    throw ConfigError("stream has no " + to_string(cfg.task) + " annotations", "task.kind");
  const TaskCodec codec = make_codec(cfg, stream->num_classes);
  const HeldOutSet heldout(stream, cfg.task, cfg.n_frames, cfg.displacement, cfg.eval_max_examples);

  ModelConfig model = cfg.model;
  ParamSet params;
  BlindPredictor blind(codec, cfg.n_frames, cfg.resolution, cfg.resolution, cfg.blind_window);
  Predictor predictor;
  switch (cfg.learner) {
    case Learner::network:
      params = ck.with_prefix("param.");
      params.require_same_layout(build_model(model), "checkpoint parameters");
      predictor = [&](const Tensor& x) { return predict(model, params, x); };
      break;
    case Learner::blind: {
      BlindState bs;
      bs.window = cfg.blind_window;
      const std::size_t n = std::stoull(ck.require("blind.history"));
      for (std::size_t i = 0; i < n; ++i) {
        const std::string p = fmt::format("blind.{}.", i);
        BlindContribution c;
        c.count = ck.tensors.at(p + "count");
        if (ck.tensors.contains(p + "sum")) c.sum = ck.tensors.at(p + "sum");
        if (ck.tensors.contains(p + "freq")) c.freq = ck.tensors.at(p + "freq");
        bs.history.push_back(std::move(c));
      }
      blind.restore(std::move(bs));
      predictor = [&](const Tensor&) { return blind.predict(); };
      break;
    }
    case Learner::copy_input:
      predictor = [](const Tensor& x) { return x; };
      break;
  }
  return {std::stoll(ck.require("step")), out_of_stream_eval(predictor, heldout, codec)};
}

std::vector<MetricRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line + "\n" != kCsvHeader)
    throw IoError(path.string() + " lacks the step,metric,split,value header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    MetricRow r;
    std::string step, value;
    if (!std::getline(fields, step, ',') || !std::getline(fields, r.metric, ',') ||
        !std::getline(fields, r.split, ',') || !std::getline(fields, value))
      throw IoError("malformed row in " + path.string() + ": " + line);
    r.step = std::stoll(step);
    r.value = std::stod(value);
    rows.push_back(std::move(r));
  }
  return rows;
}

MetricSeries select_series(const std::vector<MetricRow>& rows, const std::string& metric,
                           const std::string& split) {
  MetricSeries s(metric, metric_direction(metric));
  for (const MetricRow& r : rows)
    if (r.metric == metric && r.split == split) s.add(r.step, r.value);
  return s;
}

}  // namespace onestream
