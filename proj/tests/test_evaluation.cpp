#include <doctest.h>

#include <cmath>

#include "gradient_oracle.hpp"
#include "onestream/errors.hpp"
#include "onestream/metrics.hpp"

using namespace onestream;

namespace {

MetricSeries series(std::vector<std::pair<std::int64_t, double>> points,
                    Direction d = Direction::higher_better) {
  MetricSeries s("m", d);
  for (auto [t, v] : points) s.add(t, v);
  return s;
}

RawTarget pixel_target(int h, int w, Real value) {
  RawTarget t;
  t.task = Task::pixels;
  t.n_frames = 1;
  t.height = h;
  t.width = w;
  t.rgb = Tensor({3, std::size_t(h), std::size_t(w)}, value);
  return t;
}

RawTarget seg_target(std::vector<int> labels, int h, int w) {
  RawTarget t;
  t.task = Task::segmentation;
  t.n_frames = int(labels.size()) / (h * w);
  t.height = h;
  t.width = w;
  t.valid.assign(labels.size(), 1);
  t.labels = std::move(labels);
  return t;
}

}  // namespace

TEST_CASE("segmentation metrics") {
  const std::vector<std::uint8_t> all(5, 1);
  SUBCASE("perfect prediction") {
    const auto s = segmentation_metrics({0, 1, 2, 1, 0}, {0, 1, 2, 1, 0}, all, 1, 3);
    REQUIRE(s);
    CHECK(s->miou == 1.0);
    CHECK(s->recall == 1.0);
  }
  SUBCASE("disjoint single classes") {
    const auto s = segmentation_metrics({1, 1, 1, 1, 1}, {0, 0, 0, 0, 0}, all, 1, 3);
    REQUIRE(s);
    CHECK(s->miou == 0.0);
    CHECK(s->recall == 0.0);
  }
  SUBCASE("class 0 exact, class 1 with IoU 1/3") {
    // gt class 1 = {2,3,4}, pred class 1 = {2}: intersection 1, union 3.
    const auto s = segmentation_metrics({0, 0, 1, 2, 2}, {0, 0, 1, 1, 1}, all, 1, 3);
    REQUIRE(s);
    CHECK(s->miou == doctest::Approx(2.0 / 3.0));
    CHECK(s->recall == doctest::Approx(0.5));
  }
  SUBCASE("frames are averaged and invalid pixels ignored") {
    const std::vector<std::uint8_t> valid{1, 1, 0, 1, 1, 1};
    // Frame 0: valid {0,1}: exact. Frame 1: gt {1,1,1}, pred {2,2,2}: IoU 0.
    const auto s = segmentation_metrics({0, 1, 2, 2, 2, 2}, {0, 1, 2, 1, 1, 1}, valid, 2, 3);
    REQUIRE(s);
    CHECK(s->miou == doctest::Approx(0.5));
    CHECK(s->recall == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("no valid pixels is absent") {
    CHECK_FALSE(segmentation_metrics({0, 1}, {0, 1}, {0, 0}, 1, 2));
  }
  CHECK_THROWS(segmentation_metrics({0, 3}, {0, 1}, {1, 1}, 1, 3));
}

TEST_CASE("logRMSE") {
  const Tensor gt({1, 1, 4}, std::vector<Real>{1, 2, 3, 4});
  const std::vector<std::uint8_t> all(4, 1);
  CHECK(*logrmse(gt, gt, all) == doctest::Approx(0.0));
  Tensor scaled = gt;
  for (Real& v : scaled.data()) v *= std::exp(Real(1));
  CHECK(*logrmse(scaled, gt, all) == doctest::Approx(1.0));
  Tensor wild = gt;
  wild[3] = 1000;
  CHECK(*logrmse(wild, gt, {1, 1, 1, 0}) == doctest::Approx(0.0));
  CHECK_FALSE(logrmse(gt, gt, {0, 0, 0, 0}));
  // Predictions below the clamp behave like the clamp.
  const Tensor zero({1, 1, 1}), one({1, 1, 1}, Real(1));
  CHECK(*logrmse(zero, one, {1}) == doctest::Approx(std::abs(std::log(kMinLogDepth))));
}

TEST_CASE("cumulative score") {
  CHECK(cumulative_score(series({{0, 0.7}, {50, 0.7}, {90, 0.7}})) == 0.7);
  CHECK(std::abs(cumulative_score(series({{0, 0.0}, {4000, 1.0}})) - 0.5) <= 1.0 / 20000);
  CHECK(cumulative_score(series({{10, 0.3}})) == 0.3);
  CHECK_THROWS(cumulative_score(MetricSeries("m", Direction::higher_better)));

  SUBCASE("inserting collinear samples changes nothing") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::pair<std::int64_t, double>> pts;
      std::int64_t t = 0;
      for (int i = 0; i < 6; ++i) {
        pts.emplace_back(t, rng.uniform());
        t += 100 + std::int64_t(rng.below(400));
      }
      const double base = cumulative_score(series(pts));
      // Insert the midpoint of a random segment, exactly on the line.
      const std::size_t k = rng.below(pts.size() - 1);
      const auto [t0, v0] = pts[k];
      const auto [t1, v1] = pts[k + 1];
      const std::int64_t tm = t0 + (t1 - t0) / 2;
      const double vm = v0 + (v1 - v0) * double(tm - t0) / double(t1 - t0);
      auto more = pts;
      more.insert(more.begin() + k + 1, {tm, vm});
      CHECK(std::abs(cumulative_score(series(more)) - base) <= 1e-12);
    }
  }
  SUBCASE("lowering every sample lowers a lower-is-better score") {
    const auto a = series({{0, 0.5}, {10, 0.4}, {30, 0.2}}, Direction::lower_better);
    const auto b = series({{0, 0.45}, {10, 0.39}, {30, 0.1}}, Direction::lower_better);
    CHECK(cumulative_score(b) < cumulative_score(a));
  }
}

TEST_CASE("metric series invariants") {
  MetricSeries s("loss", Direction::lower_better);
  s.add(1, 0.5);
  CHECK_THROWS(s.add(1, 0.4));
  CHECK_THROWS(s.add(2, std::nan("")));
  CHECK(metric_direction("miou") == Direction::higher_better);
  CHECK(metric_direction("recall") == Direction::higher_better);
  CHECK(metric_direction("logrmse") == Direction::lower_better);
  CHECK(metric_direction("mse_pixel") == Direction::lower_better);
}

TEST_CASE("blind baseline") {
  const TaskCodec pixels = TaskCodec::standard(Task::pixels, 1);
  SUBCASE("no history predicts mid-gray") {
    BlindPredictor b(pixels, 2, 3, 3);
    const Tensor pred = b.predict();
    for (Real v : pred.data()) CHECK(v == Real(0.5));
    CHECK(b.predict().shape() == Shape{6, 3, 3});
  }
  SUBCASE("targets 0.2 then 0.6 average to 0.4") {
    for (std::size_t window : {std::size_t(0), std::size_t(2)}) {
      BlindPredictor b(pixels, 1, 2, 2, window);
      blind_step(b, pixel_target(2, 2, Real(0.2)));
      auto [first, st] = blind_step(b, pixel_target(2, 2, Real(0.6)));
      for (Real v : first.data()) CHECK(v == doctest::Approx(0.2));
      const Tensor pred = b.predict();
      for (Real v : pred.data()) CHECK(v == doctest::Approx(0.4));
    }
  }
  SUBCASE("the default window predicts the previous target") {
    BlindPredictor b(pixels, 1, 2, 2);
    b.observe(pixel_target(2, 2, Real(0.2)));
    b.observe(pixel_target(2, 2, Real(0.6)));
    const Tensor pred = b.predict();
    for (Real v : pred.data()) CHECK(v == doctest::Approx(0.6));
  }
  SUBCASE("constant segmentation history predicts that class color") {
    const TaskCodec seg = TaskCodec::standard(Task::segmentation, 5);
    BlindPredictor b(seg, 1, 1, 3, 0);
    for (int i = 0; i < 3; ++i) b.observe(seg_target({2, 2, 4}, 1, 3));
    b.observe(seg_target({1, 2, 4}, 1, 3));
    const RawTarget decoded = decode_prediction(seg, b.predict());
    CHECK(decoded.labels == std::vector<int>{2, 2, 4});
  }
  SUBCASE("state round-trips") {
    BlindPredictor a(pixels, 1, 2, 2, 3), b(pixels, 1, 2, 2, 3);
    a.observe(pixel_target(2, 2, Real(0.1)));
    a.observe(pixel_target(2, 2, Real(0.9)));
    b.restore(a.state());
    CHECK(a.predict() == b.predict());
  }
}

TEST_CASE("out-of-stream evaluation") {
  SyntheticConfig sc;
  sc.videos = 3;
  sc.frames_per_video = 24;
  sc.resolution = 8;
  auto stream = std::make_shared<const AnnotatedStream>(synth_stream(sc));

  SUBCASE("an identity oracle is optimal on the displacement-0 pixel task") {
    const HeldOutSet h(stream, Task::pixels, 4, 0, 5);
    CHECK(h.examples().size() == 5);
    const auto m = out_of_stream_eval([](const Tensor& x) { return x; }, h, TaskCodec::standard(Task::pixels, 1));
    REQUIRE(m.size() == 1);
    CHECK(m[0].first == "mse_pixel");
    CHECK(m[0].second == 0.0);
  }
  SUBCASE("evaluation is pure") {
    const HeldOutSet h(stream, Task::segmentation, 4, 1, 8);
    const TaskCodec codec = TaskCodec::standard(Task::segmentation, sc.classes);
    ModelConfig mc;
    mc.resolution = 8;
    mc.patch = 4;
    const ParamSet params = build_model(mc);
    const ParamSet before = params;
    Predictor p = [&](const Tensor& x) { return predict(mc, params, x); };
    const auto a = out_of_stream_eval(p, h, codec);
    const auto b = out_of_stream_eval(p, h, codec);
    CHECK(a == b);
    CHECK(params == before);
    CHECK(a.size() == 3);
  }
  SUBCASE("held-out positions are spread evenly") {
    const HeldOutSet h(stream, Task::pixels, 4, 1, 4);
    const auto all = valid_positions(*stream, 4, 1);
    REQUIRE(all.size() == 15);
    std::vector<Position> expect;
    for (std::size_t i = 0; i < 4; ++i) expect.push_back(all[i * 15 / 4]);
    CHECK(h.positions() == expect);
    const HeldOutSet everything(stream, Task::pixels, 4, 1, 100);
    CHECK(everything.positions() == all);
  }
  CHECK_THROWS_AS(HeldOutSet(stream, Task::pixels, 4, 10, 4), ConfigError);
}

TEST_CASE("chance mIoU matches independent random predictions") {
  // Frames with fixed class fractions p, predictions drawn independently with fractions q.
  Rng rng(3);
  const std::size_t n = 4000;
  std::vector<int> gt(n);
  std::vector<std::uint8_t> valid(n, 1);
  for (std::size_t i = 0; i < n; ++i) gt[i] = i < n / 2 ? 0 : (i < 3 * n / 4 ? 1 : 2);
  const std::vector<double> q{0.2, 0.5, 0.3};
  const double analytic = chance_miou(gt, valid, 1, q);

  double mc = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> pred(n);
    for (auto& v : pred) {
      const double u = rng.uniform();
      v = u < q[0] ? 0 : (u < q[0] + q[1] ? 1 : 2);
    }
    mc += segmentation_metrics(pred, gt, valid, 1, 3)->miou;
  }
  CHECK(std::abs(mc / trials - analytic) < 0.005);
  // p = (.5, .25, .25): 0.1/0.6, 0.125/0.625, 0.075/0.475.
  CHECK(analytic == doctest::Approx((0.1 / 0.6 + 0.125 / 0.625 + 0.075 / 0.475) / 3));
}

TEST_CASE("score_prediction reports the task's metrics") {
  const TaskCodec codec = TaskCodec::standard(Task::segmentation, 4);
  const RawTarget t = seg_target({0, 1, 2, 3}, 2, 2);
  const EncodedTarget enc = encode_target(codec, t);
  const MetricValues m = score_prediction(codec, enc.rgb, t, enc);
  REQUIRE(m.size() == 3);
  CHECK(m[0] == std::pair<std::string, double>{"mse_pixel", 0.0});
  CHECK(m[1] == std::pair<std::string, double>{"miou", 1.0});
  CHECK(m[2] == std::pair<std::string, double>{"recall", 1.0});
  CHECK(task_metric_names(Task::depth) == std::vector<std::string>{"mse_pixel", "logrmse"});
}
