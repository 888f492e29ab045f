#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "onestream/corruption.hpp"
#include "onestream/model.hpp"
#include "onestream/optim.hpp"
#include "onestream/stream.hpp"

namespace onestream {

enum class StreamSource { synthetic, directory };

/// network: the configured model; blind: target-history baseline;
/// copy_input: predicts the current input frames unchanged.
enum class Learner { network, blind, copy_input };

std::string to_string(Learner learner);

std::string to_string(StreamSource source);

struct StreamSpec {
  StreamSource source = StreamSource::synthetic;
  std::string path;  // frame directory root when source = directory
  SyntheticConfig synthetic;

  friend bool operator==(const StreamSpec&, const StreamSpec&) = default;
};

/// Every tunable of one experiment. Sections mirror the YAML schema; see
/// README.md for the key list.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::int64_t total_steps = 2000;
  std::int64_t log_interval = 10;
  std::int64_t eval_interval = 100;  // 0 disables out-of-stream evaluation
  std::int64_t checkpoint_interval = 1000;  // 0 disables periodic checkpoints
  std::int64_t diagnostics_interval = 1;    // 0 disables gradient diagnostics
  int resolution = 32;
  int steps_per_update = 1;

  StreamSpec stream;
  CursorMode stream_mode = CursorMode::sequential;
  StreamSpec heldout;
  std::size_t eval_max_examples = 32;

  Task task = Task::pixels;
  int displacement = 1;
  int n_frames = 4;
  std::string segmentation_colormap;  // file path; empty = built-in NYU40
  std::string depth_colormap;         // file path; empty = built-in Viridis
  double max_depth = 8.0;

  ModelConfig model;
  Learner learner = Learner::network;  // model.kind; baselines imply optimizer.enabled = false
  std::size_t blind_window = 1;

  bool optimizer_enabled = true;
  OptimizerConfig optimizer;
  LRSchedule schedule;  // `total` is derived from total_steps and the replay batch

  std::size_t replay_capacity = 0;  // 0 disables replay
  std::size_t replay_batch_size = 1;

  double anchor_strength = 0;
  std::int64_t anchor_refresh_interval = 0;

  bool augment_enabled = false;
  AugmentConfig augment;

  bool pretrain_enabled = false;
  std::int64_t pretrain_steps = 0;
  CorruptionConfig corruption;
  std::string init_checkpoint;  // parameters to start from; empty = fresh init

  /// Number of loop iterations: total_steps, divided by the replay batch
  /// size when replay is on.
  std::int64_t iterations() const;

  /// Copies shared fields (resolution, n_frames, lr, seeds, schedule total)
  /// into the sub-configs. Called by parse and preset.
  void resolve();

  /// Throws ConfigError with the dotted field path of the first violation.
  void validate() const;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved YAML, every field present; parse_config(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& config);

/// bl_cont, bl_iid, stdl_cont, stdl_iid or blind. Throws ConfigError.
ExperimentConfig preset(const std::string& name);

}  // namespace onestream
