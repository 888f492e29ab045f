#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "onestream/codec.hpp"
#include "onestream/config.hpp"
#include "onestream/metrics.hpp"
#include "onestream/stream.hpp"

namespace onestream {

/// Artifacts of a run. Every path listed exists once run_experiment returns.
struct RunLog {
  std::filesystem::path output_dir;
  std::filesystem::path metrics_csv;
  std::filesystem::path diagnostics_csv;
  std::filesystem::path pretrain_csv;  // empty without pretraining
  std::filesystem::path config_snapshot;
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path final_checkpoint;
  std::int64_t iterations = 0;
  bool stream_ended = false;
};

struct RunOptions {
  /// Continue from this checkpoint instead of starting fresh.
  std::filesystem::path resume_from;
  /// Stop after this many iterations without a final checkpoint (0 = run to
  /// the end). Simulates an interrupted run.
  std::int64_t stop_after = 0;
  /// Skip out-of-stream evaluation regardless of eval_interval.
  bool skip_out_of_stream = false;
};

/// Runs the streaming loop. Metrics rows use the schema
/// `step,metric,split,value`: in-stream rows are interval means every
/// log_interval iterations (plus a final partial interval), out-of-stream
/// rows are written at every multiple of eval_interval. Throws ConfigError,
/// IoError, or NumericError on divergence (loss non-finite or above
/// kDivergenceLoss); checkpoints already written are kept.
RunLog run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

inline constexpr double kDivergenceLoss = 1e6;

/// Builds or reads a stream and checks its resolution. `field` names the
/// config section for error messages.
std::shared_ptr<const AnnotatedStream> load_stream(const StreamSpec& spec, int resolution,
                                                   const std::string& field);

TaskCodec make_codec(const ExperimentConfig& config, int num_classes);

/// Out-of-stream metrics of a checkpoint's learner on a frame-directory
/// stream, using the checkpoint's task settings.
struct CheckpointEval {
  std::int64_t step = 0;
  MetricValues metrics;
};
CheckpointEval evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                   const std::filesystem::path& stream_root);

struct MetricRow {
  std::int64_t step = 0;
  std::string metric;
  std::string split;
  double value = 0;
};

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

/// Rows of one (metric, split) pair as a series.
MetricSeries select_series(const std::vector<MetricRow>& rows, const std::string& metric,
                           const std::string& split);

}  // namespace onestream
