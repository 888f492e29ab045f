#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "onestream/checkpoint.hpp"
#include "onestream/errors.hpp"
#include "onestream/frame_io.hpp"
#include "onestream/harness.hpp"

using namespace onestream;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

ExperimentConfig small(const fs::path& out) {
  ExperimentConfig c;
  c.seed = 3;
  c.output_dir = out.string();
  c.total_steps = 100;
  c.log_interval = 10;
  c.eval_interval = 25;
  c.checkpoint_interval = 40;
  c.resolution = 8;
  c.n_frames = 2;
  c.task = Task::segmentation;
  c.stream.synthetic.videos = 3;
  c.stream.synthetic.frames_per_video = 70;
  c.stream.synthetic.seed = 1;
  c.heldout.synthetic.videos = 2;
  c.heldout.synthetic.frames_per_video = 12;
  c.heldout.synthetic.seed = 2;
  c.eval_max_examples = 6;
  c.model.kind = ModelKind::patch_mlp;
  c.model.patch = 2;
  c.model.width = 8;
  c.model.depth = 1;
  c.optimizer.kind = OptimizerKind::rmsprop;
  c.optimizer.lr = Real(1e-3);
  c.schedule.warmup = 10;
  c.resolve();
  c.validate();
  return c;
}

std::map<std::string, int> out_of_stream_counts(const std::vector<MetricRow>& rows) {
  std::map<std::string, int> n;
  for (const MetricRow& r : rows)
    if (r.split == "out_of_stream") n[r.metric]++;
  return n;
}

std::vector<MetricRow> in_stream(const std::vector<MetricRow>& rows) {
  std::vector<MetricRow> out;
  for (const MetricRow& r : rows)
    if (r.split == "in_stream") out.push_back(r);
  return out;
}

// Full run, then an interrupted run resumed from an intermediate checkpoint;
// every artifact must match byte for byte.
void check_resume(ExperimentConfig c, std::int64_t stop_after, const std::string& ckpt) {
  const RunLog full = run_experiment(c);
  const std::string metrics = slurp(full.metrics_csv);
  const std::string diagnostics = slurp(full.diagnostics_csv);
  const std::string final_ckpt = slurp(full.final_checkpoint);
  fs::remove_all(c.output_dir);

  RunOptions stop;
  stop.stop_after = stop_after;
  const RunLog partial = run_experiment(c, stop);
  CHECK(partial.iterations == stop_after);
  CHECK_FALSE(fs::exists(fs::path(c.output_dir) / "checkpoints" / "final.ckpt"));

  RunOptions resume;
  resume.resume_from = fs::path(c.output_dir) / "checkpoints" / ckpt;
  const RunLog resumed = run_experiment(c, resume);
  CHECK(resumed.iterations == full.iterations);
  CHECK(slurp(resumed.metrics_csv) == metrics);
  CHECK(slurp(resumed.diagnostics_csv) == diagnostics);
  CHECK(slurp(resumed.final_checkpoint) == final_ckpt);
}

}  // namespace

TEST_CASE("a 100-step run writes the metrics contract") {
  TempDir dir("onestream_harness_basic");
  const ExperimentConfig c = small(dir.path / "run");
  const RunLog log = run_experiment(c);
  CHECK(log.iterations == 100);
  CHECK_FALSE(log.stream_ended);
  for (const fs::path& p : {log.metrics_csv, log.diagnostics_csv, log.config_snapshot, log.final_checkpoint})
    CHECK(fs::exists(p));
  for (const fs::path& p : log.checkpoints) CHECK(fs::exists(p));
  CHECK(log.checkpoints.size() == 3);  // steps 40, 80 and final

  std::ifstream f(log.metrics_csv);
  std::string header;
  std::getline(f, header);
  CHECK(header == "step,metric,split,value");

  const auto rows = read_metrics_csv(log.metrics_csv);
  const auto loss = select_series(rows, "loss", "in_stream").samples();
  CHECK(loss.size() >= std::size_t(100 / c.log_interval));
  for (const char* m : {"miou", "recall", "grad_norm", "grad_cosine"})
    CHECK(select_series(rows, m, "in_stream").samples().size() == 10);
  for (const MetricRow& r : rows) CHECK((r.split == "in_stream" || r.split == "out_of_stream"));

  // Out-of-stream rows at steps 25, 50, 75, 100.
  const auto oos = out_of_stream_counts(rows);
  CHECK_FALSE(oos.empty());
  for (const auto& [m, n] : oos) CHECK(n == 4);
  std::set<std::int64_t> steps;
  const auto miou = select_series(rows, "miou", "out_of_stream").samples();
  for (const auto& p : miou) steps.insert(p.step);
  CHECK(steps == std::set<std::int64_t>{25, 50, 75, 100});

  // The snapshot reproduces the config.
  ExperimentConfig snap = load_config(log.config_snapshot);
  CHECK(snap == c);
}

TEST_CASE("identical configs give byte-identical metrics") {
  TempDir dir("onestream_harness_determinism");
  ExperimentConfig c = small(dir.path / "a");
  const std::string a = slurp(run_experiment(c).metrics_csv);
  c.output_dir = (dir.path / "b").string();
  const std::string b = slurp(run_experiment(c).metrics_csv);
  CHECK(a == b);
  c.seed = 4;
  c.output_dir = (dir.path / "c").string();
  CHECK(slurp(run_experiment(c).metrics_csv) != a);
}

TEST_CASE("out-of-stream evaluation does not affect in-stream rows") {
  TempDir dir("onestream_harness_purity");
  const ExperimentConfig c = small(dir.path / "on");
  const auto with_eval = read_metrics_csv(run_experiment(c).metrics_csv);
  ExperimentConfig off = small(dir.path / "off");
  RunOptions skip;
  skip.skip_out_of_stream = true;
  const auto without = read_metrics_csv(run_experiment(off, skip).metrics_csv);
  CHECK(out_of_stream_counts(without).empty());
  const auto a = in_stream(with_eval), b = in_stream(without);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].step == b[i].step);
    CHECK(a[i].metric == b[i].metric);
    CHECK(a[i].value == b[i].value);
  }
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  TempDir dir("onestream_harness_resume");
  SUBCASE("plain sequential run") { check_resume(small(dir.path / "plain"), 70, "step_00000040.ckpt"); }
  SUBCASE("gradient accumulation with a pending partial sum") {
    ExperimentConfig c = small(dir.path / "acc");
    c.steps_per_update = 3;
    c.resolve();
    check_resume(c, 70, "step_00000040.ckpt");
  }
  SUBCASE("replay, augmentation and anchoring on an iid stream") {
    ExperimentConfig c = small(dir.path / "replay");
    c.task = Task::pixels;
    c.displacement = 0;
    c.stream_mode = CursorMode::iid;
    c.replay_capacity = 16;
    c.replay_batch_size = 2;
    c.total_steps = 200;
    c.augment_enabled = true;
    c.augment.mode = AugmentMode::per_video;
    c.augment.crop_fraction = 0.75;
    c.augment.flip_prob = 0.5;
    c.anchor_strength = 0.1;
    c.anchor_refresh_interval = 7;
    c.optimizer.kind = OptimizerKind::adamw;
    c.optimizer.beta1 = Real(0.9);
    c.resolve();
    c.validate();
    CHECK(c.iterations() == 100);
    check_resume(c, 90, "step_00000080.ckpt");
  }
  SUBCASE("blind baseline") {
    ExperimentConfig c = small(dir.path / "blind");
    c.learner = Learner::blind;
    c.optimizer_enabled = false;
    c.blind_window = 3;
    c.resolve();
    check_resume(c, 50, "step_00000040.ckpt");
  }
}

TEST_CASE("a checkpoint from another config is refused") {
  TempDir dir("onestream_harness_mismatch");
  ExperimentConfig c = small(dir.path / "run");
  const RunLog log = run_experiment(c);
  c.optimizer.lr = Real(2e-3);
  c.resolve();
  RunOptions resume;
  resume.resume_from = log.checkpoints.front();
  CHECK_THROWS_AS(run_experiment(c, resume), ConfigError);
}

TEST_CASE("divergence raises and keeps earlier checkpoints") {
  TempDir dir("onestream_harness_diverge");
  ExperimentConfig c = small(dir.path / "run");
  c.optimizer.kind = OptimizerKind::sgd;
  c.optimizer.lr = Real(1e7);
  c.schedule.warmup = 0;
  c.checkpoint_interval = 1;
  c.resolve();
  CHECK_THROWS_AS(run_experiment(c), NumericError);
  CHECK(fs::exists(dir.path / "run" / "checkpoints" / "step_00000001.ckpt"));
  CHECK_FALSE(fs::exists(dir.path / "run" / "checkpoints" / "final.ckpt"));
}

TEST_CASE("a short stream ends the run early") {
  TempDir dir("onestream_harness_short");
  ExperimentConfig c = small(dir.path / "run");
  c.stream.synthetic.videos = 1;
  c.stream.synthetic.frames_per_video = 20;
  c.resolve();
  const RunLog log = run_experiment(c);
  CHECK(log.stream_ended);
  CHECK(log.iterations == 9);  // non-overlapping 2-frame steps, each spanning 4 frames
  CHECK(fs::exists(log.final_checkpoint));
}

TEST_CASE("presets run at small scale") {
  TempDir dir("onestream_harness_presets");
  const ExperimentConfig base = small(dir.path);
  for (const char* name : {"bl_cont", "stdl_iid", "blind"}) {
    ExperimentConfig c = preset(name);
    c.output_dir = (dir.path / name).string();
    c.total_steps = 64;
    c.log_interval = 8;
    c.eval_interval = 32;
    c.checkpoint_interval = 0;
    c.resolution = 8;
    c.stream = base.stream;
    c.stream.synthetic.frames_per_video = 120;
    c.heldout = base.heldout;
    c.eval_max_examples = 4;
    c.model.patch = 2;
    c.model.width = 8;
    c.schedule.warmup = 4;
    c.pretrain_steps = 12;
    c.corruption.patch_size = 4;
    c.resolve();
    const RunLog log = run_experiment(c);
    CHECK(fs::exists(log.final_checkpoint));
    CHECK(log.iterations == 64);
    if (std::string(name) == "bl_cont") {
      CHECK(fs::exists(log.pretrain_csv));
      CHECK(fs::exists(dir.path / name / "checkpoints" / "pretrain.ckpt"));
    }
    const auto rows = read_metrics_csv(log.metrics_csv);
    CHECK(select_series(rows, "miou", "out_of_stream").samples().size() == 2);
  }
}

TEST_CASE("frame-directory streams and checkpoint evaluation") {
  TempDir dir("onestream_harness_frames");
  ExperimentConfig c = small(dir.path / "run");
  write_frame_directory(*load_stream(c.stream, c.resolution, "stream"), dir.path / "train");
  write_frame_directory(*load_stream(c.heldout, c.resolution, "heldout"), dir.path / "held");
  const std::string synthetic = slurp(run_experiment(c).metrics_csv);

  c.output_dir = (dir.path / "dir_run").string();
  c.stream.source = StreamSource::directory;
  c.stream.path = (dir.path / "train").string();
  c.heldout.source = StreamSource::directory;
  c.heldout.path = (dir.path / "held").string();
  c.resolve();
  const RunLog log = run_experiment(c);
  // Directory streams hold the same frames as the synthetic ones.
  CHECK(slurp(log.metrics_csv) == synthetic);

  const CheckpointEval ev = evaluate_checkpoint(log.final_checkpoint, dir.path / "held");
  CHECK(ev.step == 100);
  const auto rows = read_metrics_csv(log.metrics_csv);
  for (const auto& [name, value] : ev.metrics) {
    const auto s = select_series(rows, name, "out_of_stream").samples();
    REQUIRE_FALSE(s.empty());
    CHECK(s.back().step == 100);
    CHECK(s.back().value == doctest::Approx(value).epsilon(1e-12));
  }

  c.stream.path = (dir.path / "missing").string();
  CHECK_THROWS(run_experiment(c));
}

TEST_CASE("copy-input learner scores the identity prediction") {
  TempDir dir("onestream_harness_copy");
  ExperimentConfig c = small(dir.path / "run");
  c.task = Task::pixels;
  c.displacement = 0;
  c.learner = Learner::copy_input;
  c.optimizer_enabled = false;
  c.resolve();
  const auto rows = read_metrics_csv(run_experiment(c).metrics_csv);
  const auto mse = select_series(rows, "mse_pixel", "out_of_stream").samples();
  REQUIRE(mse.size() == 4);
  for (const auto& p : mse) CHECK(p.value == 0.0);
  CHECK(select_series(rows, "loss", "in_stream").empty());
  CHECK(select_series(rows, "mse_pixel", "in_stream").samples().size() == 10);
}

TEST_CASE("run configuration errors") {
  TempDir dir("onestream_harness_errors");
  ExperimentConfig c = small(dir.path / "run");
  c.task = Task::depth;
  c.stream.synthetic.depth_layers = 4;
  c.resolution = 12;
  c.resolve();
  // patch 2 divides 12; synthetic streams are built at the run resolution.
  CHECK_NOTHROW(run_experiment(c));
  c.resolution = 9;
  c.resolve();
  CHECK_THROWS_AS(run_experiment(c), ConfigError);
}

TEST_CASE("metrics csv reader") {
  TempDir dir("onestream_harness_csv");
  {
    std::ofstream f(dir.path / "m.csv");
    f << "step,metric,split,value\n10,loss,in_stream,0.5\n20,loss,in_stream,0.25\n20,miou,out_of_stream,0.7\n";
  }
  const auto rows = read_metrics_csv(dir.path / "m.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].metric == "miou");
  CHECK(rows[2].split == "out_of_stream");
  const auto s = select_series(rows, "loss", "in_stream").samples();
  REQUIRE(s.size() == 2);
  CHECK(s[1].step == 20);
  CHECK(s[1].value == 0.25);
  {
    std::ofstream f(dir.path / "bad.csv");
    f << "a,b\n1,2\n";
  }
  CHECK_THROWS(read_metrics_csv(dir.path / "bad.csv"));
  CHECK_THROWS(read_metrics_csv(dir.path / "missing.csv"));
}
