#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "onestream/config.hpp"
#include "onestream/errors.hpp"
#include "onestream/frame_io.hpp"
#include "onestream/harness.hpp"

using namespace onestream;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kDiverged = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-stream continual learning experiments"};
  app.require_subcommand(1);

  std::string config_path, resume_path, out_path, preset_name, checkpoint_path, stream_path;
  std::int64_t stop_after = 0;

  auto* run = app.add_subcommand("run", "Run an experiment from a YAML config");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--resume", resume_path, "Checkpoint to continue from")->check(CLI::ExistingFile);
  run->add_option("--stop-after", stop_after, "Stop after this many iterations");

  auto* pre = app.add_subcommand("preset", "Write a preset config");
  pre->add_option("name", preset_name, "bl_cont, bl_iid, stdl_cont, stdl_iid or blind")->required();
  pre->add_option("--out", out_path, "Output YAML path")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a frame-directory stream");
  eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("stream", stream_path, "Frame directory root")->required()->check(CLI::ExistingDirectory);

  auto* synth = app.add_subcommand("synth", "Materialize a config's synthetic stream as a frame directory");
  synth->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) {
      const ExperimentConfig cfg = load_config(config_path);
      RunOptions options;
      options.resume_from = resume_path;
      options.stop_after = stop_after;
      const RunLog log = run_experiment(cfg, options);
      std::cout << fmt::format("{} iterations{}\nmetrics: {}\ndiagnostics: {}\ncheckpoint: {}\n", log.iterations,
                               log.stream_ended ? " (stream ended)" : "", log.metrics_csv.string(),
                               log.diagnostics_csv.string(), log.final_checkpoint.string());
    } else if (*pre) {
      const ExperimentConfig cfg = preset(preset_name);
      std::ofstream out(out_path);
      out << emit_config(cfg);
      if (!out) throw IoError("cannot write " + out_path);
    } else if (*eval) {
      const CheckpointEval result = evaluate_checkpoint(checkpoint_path, stream_path);
      std::cout << "step,metric,split,value\n";
      for (const auto& [name, value] : result.metrics)
        std::cout << fmt::format("{},{},out_of_stream,{:.17g}\n", result.step, name, value);
    } else if (*synth) {
      const ExperimentConfig cfg = load_config(config_path);
      if (cfg.stream.source != StreamSource::synthetic)
        throw ConfigError("stream source is not synthetic", "stream.source");
      write_frame_directory(synth_stream(cfg.stream.synthetic), out_path);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  }
  return kOk;
}
