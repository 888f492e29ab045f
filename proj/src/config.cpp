#include "onestream/config.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "onestream/errors.hpp"
#include "onestream/rng.hpp"

namespace onestream {

std::string to_string(StreamSource source) {
  return source == StreamSource::synthetic ? "synthetic" : "directory";
}

std::string to_string(Learner learner) {
  switch (learner) {
    case Learner::network: return "network";
    case Learner::blind: return "blind";
    case Learner::copy_input: return "copy_input";
  }
  return "network";
}

namespace {

std::string to_string(CursorMode mode) { return mode == CursorMode::sequential ? "sequential" : "iid"; }

// Typed access to one YAML mapping; remembers which keys were read so that
// unknown keys can be reported with their full path.
class Section {
 public:
  Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError("must be a mapping", path_or_root());
  }

  template <typename T>
  void read(const std::string& key, T& value) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node child = node_[key];
    if (!child) return;
    if (!child.IsScalar()) throw ConfigError("must be a scalar", field(key));
    try {
      value = child.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError("cannot parse '" + child.Scalar() + "'", field(key));
    }
  }

  template <typename Enum, typename Parse>
  void read_enum(const std::string& key, Enum& value, Parse parse) {
    std::string name;
    read(key, name);
    if (name.empty()) return;
    try {
      value = parse(name);
    } catch (const ConfigError& e) {
      throw ConfigError("unknown value '" + name + "'", field(key));
    } catch (const std::invalid_argument&) {
      throw ConfigError("unknown value '" + name + "'", field(key));
    }
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), field(key));
  }

  void reject_unknown() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key)) throw ConfigError("unknown key", field(key));
    }
  }

 private:
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string path_or_root() const { return path_.empty() ? "<root>" : path_; }

  YAML::Node node_;
  std::string path_;
  std::set<std::string> seen_;
};


void read_real(Section& s, const std::string& key, Real& value) {
  double v = double(value);
  s.read(key, v);
  value = Real(v);
}

void read_synthetic(Section s, SyntheticConfig& c) {
  s.read("videos", c.videos);
  s.read("frames_per_video", c.frames_per_video);
  s.read("shapes", c.shapes);
  s.read("velocity_min", c.velocity_min);
  s.read("velocity_max", c.velocity_max);
  s.read("size_min", c.size_min);
  s.read("size_max", c.size_max);
  s.read("background_drift", c.background_drift);
  s.read("classes", c.classes);
  s.read("depth_min", c.depth_min);
  s.read("depth_max", c.depth_max);
  s.read("depth_layers", c.depth_layers);
  s.read("seed", c.seed);
  s.reject_unknown();
}

void read_stream_spec(Section& s, StreamSpec& spec) {
  s.read_enum("source", spec.source, [](const std::string& n) {
    if (n == "synthetic") return StreamSource::synthetic;
    if (n == "directory") return StreamSource::directory;
    throw ConfigError("unknown source");
  });
  s.read("path", spec.path);
  read_synthetic(s.child("synthetic"), spec.synthetic);
}

template <typename T>
void kv(YAML::Emitter& e, const char* key, const T& value);

void emit_synthetic(YAML::Emitter& e, const SyntheticConfig& c) {
  e << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  kv(e, "videos", c.videos);
  kv(e, "frames_per_video", c.frames_per_video);
  kv(e, "shapes", c.shapes);
  kv(e, "velocity_min", c.velocity_min);
  kv(e, "velocity_max", c.velocity_max);
  kv(e, "size_min", c.size_min);
  kv(e, "size_max", c.size_max);
  kv(e, "background_drift", c.background_drift);
  kv(e, "classes", c.classes);
  kv(e, "depth_min", c.depth_min);
  kv(e, "depth_max", c.depth_max);
  kv(e, "depth_layers", c.depth_layers);
  kv(e, "seed", c.seed);
  e << YAML::EndMap;
}

void emit_stream_spec(YAML::Emitter& e, const StreamSpec& s) {
  kv(e, "source", to_string(s.source));
  kv(e, "path", s.path);
  emit_synthetic(e, s.synthetic);
}

template <typename T>
void kv(YAML::Emitter& e, const char* key, const T& value) {
  if constexpr (std::is_floating_point_v<T>)
    e << YAML::Key << key << YAML::Value << fmt::format("{}", double(value));
  else e << YAML::Key << key << YAML::Value << value;
}

}  // namespace

std::int64_t ExperimentConfig::iterations() const {
  return replay_capacity > 0 ? total_steps / std::int64_t(replay_batch_size) : total_steps;
}

void ExperimentConfig::resolve() {
  model.n_frames = n_frames;
  model.resolution = resolution;
  stream.synthetic.resolution = resolution;
  heldout.synthetic.resolution = resolution;
  schedule.base = optimizer.lr;
  schedule.total = std::max<std::int64_t>(1, iterations());
  corruption.seed = Rng::mix(seed, 0xc022);
  if (learner != Learner::network) optimizer_enabled = false;
}

void ExperimentConfig::validate() const {
  if (total_steps < 1) throw ConfigError("must be positive", "total_steps");
  if (log_interval < 1) throw ConfigError("must be positive", "log_interval");
  if (eval_interval < 0) throw ConfigError("must be >= 0", "eval_interval");
  if (checkpoint_interval < 0) throw ConfigError("must be >= 0", "checkpoint_interval");
  if (diagnostics_interval < 0) throw ConfigError("must be >= 0", "diagnostics_interval");
  if (steps_per_update < 1) throw ConfigError("must be positive", "steps_per_update");
  if (output_dir.empty()) throw ConfigError("must not be empty", "output_dir");
  if (displacement < 0) throw ConfigError("must be >= 0", "task.displacement");
  if (n_frames < 1) throw ConfigError("must be >= 1", "task.n_frames");
  if (!(max_depth > 0)) throw ConfigError("must be > 0", "task.max_depth");
  if (eval_max_examples < 1) throw ConfigError("must be positive", "evaluation.max_examples");
  if (stream.source == StreamSource::directory && stream.path.empty())
    throw ConfigError("directory source needs a path", "stream.path");
  if (heldout.source == StreamSource::directory && heldout.path.empty())
    throw ConfigError("directory source needs a path", "heldout.path");
  if (stream.source == StreamSource::synthetic) stream.synthetic.validate();
  if (heldout.source == StreamSource::synthetic) {
    try {
      heldout.synthetic.validate();
    } catch (const ConfigError& e) {
      std::string f = e.field();
      if (f.rfind("stream.", 0) == 0) f = "heldout." + f.substr(7);
      throw ConfigError(e.what(), f);
    }
  }
  if (learner == Learner::network) model.validate();
  optimizer.validate();
  if (schedule.warmup >= iterations())
    throw ConfigError("warmup must be shorter than the run (" + std::to_string(iterations()) + " iterations)",
                      "schedule.warmup");
  schedule.validate();
  if (replay_capacity > 0 && replay_batch_size < 1) throw ConfigError("must be positive", "replay.batch_size");
  if (replay_capacity > 0 && replay_batch_size > std::size_t(total_steps))
    throw ConfigError("exceeds total_steps", "replay.batch_size");
  if (anchor_strength < 0) throw ConfigError("must be >= 0", "anchor.strength");
  if (anchor_strength > 0 && anchor_refresh_interval < 1)
    throw ConfigError("must be positive when the anchor is on", "anchor.refresh_interval");
  if (augment_enabled) {
    augment.validate();
    if (displacement > 0)
      throw ConfigError("augmentation is only supported with displacement 0", "augment.enabled");
  }
  if (pretrain_enabled) {
    corruption.validate();
    if (pretrain_steps < 1) throw ConfigError("must be positive", "pretrain.steps");
    if (learner != Learner::network) throw ConfigError("baselines cannot be pretrained", "pretrain.enabled");
    if (resolution % corruption.patch_size)
      throw ConfigError("must divide the resolution", "pretrain.patch_size");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  ExperimentConfig c;
  Section top(root, "");
  top.read("seed", c.seed);
  top.read("output_dir", c.output_dir);
  top.read("total_steps", c.total_steps);
  top.read("log_interval", c.log_interval);
  top.read("eval_interval", c.eval_interval);
  top.read("checkpoint_interval", c.checkpoint_interval);
  top.read("diagnostics_interval", c.diagnostics_interval);
  top.read("resolution", c.resolution);
  top.read("steps_per_update", c.steps_per_update);

  {
    Section s = top.child("stream");
    read_stream_spec(s, c.stream);
    s.read_enum("mode", c.stream_mode, [](const std::string& n) {
      if (n == "sequential") return CursorMode::sequential;
      if (n == "iid") return CursorMode::iid;
      throw ConfigError("unknown mode");
    });
    s.reject_unknown();
  }
  {
    Section s = top.child("heldout");
    read_stream_spec(s, c.heldout);
    s.reject_unknown();
  }
  {
    Section s = top.child("evaluation");
    s.read("max_examples", c.eval_max_examples);
    s.reject_unknown();
  }
  {
    Section s = top.child("task");
    s.read_enum("kind", c.task, parse_task);
    s.read("displacement", c.displacement);
    s.read("n_frames", c.n_frames);
    s.read("segmentation_colormap", c.segmentation_colormap);
    s.read("depth_colormap", c.depth_colormap);
    s.read("max_depth", c.max_depth);
    s.reject_unknown();
  }
  {
    Section s = top.child("model");
    std::string kind;
    s.read("kind", kind);
    if (kind == "blind") {
      c.learner = Learner::blind;
    } else if (kind == "copy_input") {
      c.learner = Learner::copy_input;
    } else if (!kind.empty()) {
      try {
        c.model.kind = parse_model_kind(kind);
      } catch (const std::exception&) {
        throw ConfigError("unknown value '" + kind + "'", "model.kind");
      }
    }
    s.read("width", c.model.width);
    s.read("depth", c.model.depth);
    s.read("levels", c.model.levels);
    s.read("patch", c.model.patch);
    s.read("attention", c.model.attention);
    s.read("groups", c.model.groups);
    s.read("residual", c.model.residual);
    s.read("identity_init", c.model.identity_init);
    s.read("seed", c.model.seed);
    s.read("blind_window", c.blind_window);
    s.reject_unknown();
  }
  {
    Section s = top.child("optimizer");
    OptimizerKind kind = c.optimizer.kind;
    s.read_enum("kind", kind, parse_optimizer_kind);
    c.optimizer = OptimizerConfig::defaults_for(kind);
    s.read("enabled", c.optimizer_enabled);
    read_real(s, "lr", c.optimizer.lr);
    read_real(s, "beta1", c.optimizer.beta1);
    read_real(s, "beta2", c.optimizer.beta2);
    read_real(s, "eps", c.optimizer.eps);
    read_real(s, "weight_decay", c.optimizer.weight_decay);
    s.read("bias_correction", c.optimizer.bias_correction);
    s.read("eps_inside_sqrt", c.optimizer.eps_inside_sqrt);
    s.reject_unknown();
  }
  {
    Section s = top.child("schedule");
    s.read_enum("kind", c.schedule.kind, parse_schedule_kind);
    s.read("warmup", c.schedule.warmup);
    read_real(s, "power", c.schedule.power);
    read_real(s, "decay_rate", c.schedule.decay_rate);
    read_real(s, "one_cycle_peak", c.schedule.one_cycle_peak);
    read_real(s, "one_cycle_div", c.schedule.one_cycle_div);
    read_real(s, "restart_fraction", c.schedule.restart_fraction);
    s.reject_unknown();
  }
  {
    Section s = top.child("replay");
    s.read("capacity", c.replay_capacity);
    s.read("batch_size", c.replay_batch_size);
    s.reject_unknown();
  }
  {
    Section s = top.child("anchor");
    s.read("strength", c.anchor_strength);
    s.read("refresh_interval", c.anchor_refresh_interval);
    s.reject_unknown();
  }
  {
    Section s = top.child("augment");
    s.read("enabled", c.augment_enabled);
    s.read_enum("mode", c.augment.mode, parse_augment_mode);
    s.read("crop_fraction", c.augment.crop_fraction);
    s.read("flip_prob", c.augment.flip_prob);
    s.reject_unknown();
  }
  {
    Section s = top.child("pretrain");
    s.read("enabled", c.pretrain_enabled);
    s.read("steps", c.pretrain_steps);
    s.read_enum("mode", c.corruption.mode, parse_corruption_mode);
    s.read("fraction", c.corruption.fraction);
    s.read("patch_size", c.corruption.patch_size);
    s.read("init_checkpoint", c.init_checkpoint);
    s.reject_unknown();
  }
  top.reject_unknown();
  c.resolve();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string emit_config(const ExperimentConfig& c) {
  YAML::Emitter e;
  e << YAML::BeginMap;
  kv(e, "seed", c.seed);
  kv(e, "output_dir", c.output_dir);
  kv(e, "total_steps", c.total_steps);
  kv(e, "log_interval", c.log_interval);
  kv(e, "eval_interval", c.eval_interval);
  kv(e, "checkpoint_interval", c.checkpoint_interval);
  kv(e, "diagnostics_interval", c.diagnostics_interval);
  kv(e, "resolution", c.resolution);
  kv(e, "steps_per_update", c.steps_per_update);

  e << YAML::Key << "stream" << YAML::Value << YAML::BeginMap;
  emit_stream_spec(e, c.stream);
  kv(e, "mode", to_string(c.stream_mode));
  e << YAML::EndMap;

  e << YAML::Key << "heldout" << YAML::Value << YAML::BeginMap;
  emit_stream_spec(e, c.heldout);
  e << YAML::EndMap;

  e << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  kv(e, "max_examples", c.eval_max_examples);
  e << YAML::EndMap;

  e << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  kv(e, "kind", to_string(c.task));
  kv(e, "displacement", c.displacement);
  kv(e, "n_frames", c.n_frames);
  kv(e, "segmentation_colormap", c.segmentation_colormap);
  kv(e, "depth_colormap", c.depth_colormap);
  kv(e, "max_depth", c.max_depth);
  e << YAML::EndMap;

  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  kv(e, "kind", c.learner == Learner::network ? to_string(c.model.kind) : to_string(c.learner));
  kv(e, "width", c.model.width);
  kv(e, "depth", c.model.depth);
  kv(e, "levels", c.model.levels);
  kv(e, "patch", c.model.patch);
  kv(e, "attention", c.model.attention);
  kv(e, "groups", c.model.groups);
  kv(e, "residual", c.model.residual);
  kv(e, "identity_init", c.model.identity_init);
  kv(e, "seed", c.model.seed);
  kv(e, "blind_window", c.blind_window);
  e << YAML::EndMap;

  e << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap;
  kv(e, "enabled", c.optimizer_enabled);
  kv(e, "kind", to_string(c.optimizer.kind));
  kv(e, "lr", c.optimizer.lr);
  kv(e, "beta1", c.optimizer.beta1);
  kv(e, "beta2", c.optimizer.beta2);
  kv(e, "eps", c.optimizer.eps);
  kv(e, "weight_decay", c.optimizer.weight_decay);
  kv(e, "bias_correction", c.optimizer.bias_correction);
  kv(e, "eps_inside_sqrt", c.optimizer.eps_inside_sqrt);
  e << YAML::EndMap;

  e << YAML::Key << "schedule" << YAML::Value << YAML::BeginMap;
  kv(e, "kind", to_string(c.schedule.kind));
  kv(e, "warmup", c.schedule.warmup);
  kv(e, "power", c.schedule.power);
  kv(e, "decay_rate", c.schedule.decay_rate);
  kv(e, "one_cycle_peak", c.schedule.one_cycle_peak);
  kv(e, "one_cycle_div", c.schedule.one_cycle_div);
  kv(e, "restart_fraction", c.schedule.restart_fraction);
  e << YAML::EndMap;

  e << YAML::Key << "replay" << YAML::Value << YAML::BeginMap;
  kv(e, "capacity", c.replay_capacity);
  kv(e, "batch_size", c.replay_batch_size);
  e << YAML::EndMap;

  e << YAML::Key << "anchor" << YAML::Value << YAML::BeginMap;
  kv(e, "strength", c.anchor_strength);
  kv(e, "refresh_interval", c.anchor_refresh_interval);
  e << YAML::EndMap;

  e << YAML::Key << "augment" << YAML::Value << YAML::BeginMap;
  kv(e, "enabled", c.augment_enabled);
  kv(e, "mode", to_string(c.augment.mode));
  kv(e, "crop_fraction", c.augment.crop_fraction);
  kv(e, "flip_prob", c.augment.flip_prob);
  e << YAML::EndMap;

  e << YAML::Key << "pretrain" << YAML::Value << YAML::BeginMap;
  kv(e, "enabled", c.pretrain_enabled);
  kv(e, "steps", c.pretrain_steps);
  kv(e, "mode", to_string(c.corruption.mode));
  kv(e, "fraction", c.corruption.fraction);
  kv(e, "patch_size", c.corruption.patch_size);
  kv(e, "init_checkpoint", c.init_checkpoint);
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.task = Task::segmentation;
  c.total_steps = 4000;
  c.eval_interval = 200;
  c.stream.synthetic.videos = 20;
  c.stream.synthetic.frames_per_video = 820;
  c.stream.synthetic.seed = 1;
  c.heldout.synthetic.videos = 4;
  c.heldout.synthetic.frames_per_video = 200;
  c.heldout.synthetic.seed = 2;
  c.schedule.kind = ScheduleKind::constant;
  c.schedule.warmup = 1000;
  c.corruption.patch_size = 8;

  const bool bl = name == "bl_cont" || name == "bl_iid";
  const bool stdl = name == "stdl_cont" || name == "stdl_iid";
  if (bl) {
    c.optimizer = OptimizerConfig::defaults_for(OptimizerKind::rmsprop);
    c.steps_per_update = 16;
    c.pretrain_enabled = true;
    c.pretrain_steps = 1000;
    c.corruption.mode = CorruptionMode::guided;
    c.corruption.fraction = 0.05;
  } else if (stdl) {
    c.optimizer = OptimizerConfig::defaults_for(OptimizerKind::adamw);
    c.optimizer.lr = Real(1e-4);
    c.optimizer.beta1 = Real(0.9);
    c.optimizer.weight_decay = Real(0.01);
    c.steps_per_update = 1;
  } else if (name == "blind") {
    c.learner = Learner::blind;
  } else {
    throw ConfigError("unknown preset '" + name + "'", "preset");
  }
  c.stream_mode = name.ends_with("_iid") ? CursorMode::iid : CursorMode::sequential;
  c.output_dir = "runs/" + name;
  c.resolve();
  c.validate();
  return c;
}

}  // namespace onestream
