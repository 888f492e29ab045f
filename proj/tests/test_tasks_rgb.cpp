#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "onestream/codec.hpp"
#include "onestream/errors.hpp"

using namespace onestream;

namespace {

RawTarget seg_target(std::vector<int> labels, int h, int w, int n = 1) {
  RawTarget t;
  t.task = Task::segmentation;
  t.n_frames = n;
  t.height = h;
  t.width = w;
  t.valid.assign(labels.size(), 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0) t.valid[i] = 0;
  t.labels = std::move(labels);
  return t;
}

RawTarget depth_target(std::vector<Real> meters) {
  RawTarget t;
  t.task = Task::depth;
  t.n_frames = 1;
  t.height = 1;
  const std::size_t n = meters.size();
  t.width = int(n);
  t.valid.assign(n, 1);
  t.depth = Tensor({1, 1, n}, std::move(meters));
  return t;
}

std::size_t brute_nearest(const Colormap& cm, Real r, Real g, Real b) {
  std::size_t best = 0;
  double bd = 1e300;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    const double d = std::pow(double(cm[i][0] - r), 2) + std::pow(double(cm[i][1] - g), 2) +
                     std::pow(double(cm[i][2] - b), 2);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("palettes are nonempty and distinct") {
  const Colormap v = Colormap::viridis();
  CHECK(v.size() == 256);
  const Colormap n = Colormap::nyu40();
  CHECK(n.size() == 40);
  CHECK(Colormap::nyu40(9).size() == 9);
  CHECK_THROWS_AS(Colormap::nyu40(41), ConfigError);
  for (const Colormap* cm : {&v, &n})
    for (std::size_t i = 0; i < cm->size(); ++i)
      for (std::size_t j = i + 1; j < cm->size(); ++j) CHECK((*cm)[i] != (*cm)[j]);
  // Viridis runs from dark purple to yellow.
  CHECK(v[0][2] > v[0][1]);
  CHECK(v[255][0] > 0.9);
  CHECK_THROWS_AS(Colormap("dup", {{0, 0, 0}, {0, 0, 0}}), ConfigError);
}

TEST_CASE("segmentation encoding") {
  const TaskCodec codec = TaskCodec::standard(Task::segmentation, 40);
  SUBCASE("class 0 everywhere gives a constant frame with a full mask") {
    const EncodedTarget e = encode_target(codec, seg_target(std::vector<int>(12, 0), 3, 4));
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < 12; ++p) CHECK(e.rgb[ch * 12 + p] == codec.segmentation_colormap()[0][ch]);
    for (Real m : e.mask.data()) CHECK(m == 1);
  }
  SUBCASE("one ignore pixel gives exactly one zero in the mask") {
    std::vector<int> labels(12, 3);
    labels[5] = -1;
    const EncodedTarget e = encode_target(codec, seg_target(labels, 3, 4));
    int zeros = 0;
    for (Real m : e.mask.data()) zeros += m == 0;
    CHECK(zeros == 1);
    CHECK(e.mask[5] == 0);
  }
  SUBCASE("class ids outside the palette are rejected") {
    CHECK_THROWS(encode_target(codec, seg_target({40}, 1, 1)));
    CHECK_THROWS(encode_target(TaskCodec::standard(Task::segmentation, 5), seg_target({5}, 1, 1)));
  }
}

TEST_CASE("segmentation roundtrip is the identity over all class ids") {
  for (int classes : {2, 9, 40}) {
    const TaskCodec codec = TaskCodec::standard(Task::segmentation, classes);
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c) labels.push_back(c);
    const RawTarget raw = seg_target(labels, 1, classes);
    const RawTarget back = decode_prediction(codec, encode_target(codec, raw).rgb);
    CHECK(back.labels == labels);
  }
}

TEST_CASE("a +0.004 perturbation of every palette color still decodes to its class") {
  const TaskCodec codec = TaskCodec::standard(Task::segmentation, 40);
  const Colormap& cm = codec.segmentation_colormap();
  Tensor rgb({3, 1, cm.size()});
  for (std::size_t k = 0; k < cm.size(); ++k)
    for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch * cm.size() + k] = cm[k][ch] + Real(0.004);
  const RawTarget back = decode_prediction(codec, rgb);
  for (std::size_t k = 0; k < cm.size(); ++k) {
    CHECK(back.labels[k] == int(k));
    const auto c = [&](std::size_t ch) { return std::clamp(rgb[ch * cm.size() + k], Real(0), Real(1)); };
    CHECK(brute_nearest(cm, c(0), c(1), c(2)) == k);
  }
}

TEST_CASE("nearest-color ties go to the lowest index") {
  const Colormap cm("two", {{0, 0, 0}, {1, 1, 1}});
  CHECK(cm.nearest(Real(0.5), Real(0.5), Real(0.5)) == 0);
  CHECK(cm.nearest(Real(0.6), Real(0.5), Real(0.5)) == 1);
}

TEST_CASE("depth encoding and roundtrip") {
  const TaskCodec codec = TaskCodec::standard(Task::depth, 1);
  const Colormap& cm = codec.depth_colormap();
  SUBCASE("8 m maps to the last entry, beyond 8 m is clamped") {
    const EncodedTarget e = encode_target(codec, depth_target({8.0, 12.0, 0.0}));
    for (std::size_t ch = 0; ch < 3; ++ch) {
      CHECK(e.rgb[ch * 3 + 0] == cm[255][ch]);
      CHECK(e.rgb[ch * 3 + 1] == cm[255][ch]);
      CHECK(e.rgb[ch * 3 + 2] == cm[0][ch]);
    }
  }
  SUBCASE("1000-point grid on [0, 8]") {
    std::vector<Real> d;
    for (int i = 0; i < 1000; ++i) d.push_back(Real(8.0 * i / 999.0));
    const RawTarget raw = depth_target(d);
    const EncodedTarget e = encode_target(codec, raw);
    for (Real v : e.rgb.data()) CHECK((v >= 0 && v <= 1));
    const RawTarget back = decode_prediction(codec, e.rgb);
    double worst = 0;
    for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(double(back.depth[i] - d[i])));
    CHECK(worst <= 8.0 / 255 + 1e-12);
    const RawTarget four = decode_prediction(codec, encode_target(codec, depth_target({4.0})).rgb);
    CHECK(std::abs(double(four.depth[0]) - 4.0) <= 8.0 / 255);
  }
  SUBCASE("invalid pixels are masked and negative depth is rejected") {
    RawTarget t = depth_target({1.0, 2.0});
    t.valid[1] = 0;
    const EncodedTarget e = encode_target(codec, t);
    CHECK(e.mask[0] == 1);
    CHECK(e.mask[1] == 0);
    CHECK_THROWS(encode_target(codec, depth_target({-0.5})));
  }
}

TEST_CASE("pixel task passes through with a full mask") {
  const TaskCodec codec = TaskCodec::standard(Task::pixels, 1);
  RawTarget t;
  t.task = Task::pixels;
  t.n_frames = 1;
  t.height = 1;
  t.width = 2;
  t.rgb = Tensor({3, 1, 2}, std::vector<Real>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  const EncodedTarget e = encode_target(codec, t);
  CHECK(e.rgb == t.rgb);
  for (Real m : e.mask.data()) CHECK(m == 1);
  Tensor wild({3, 1, 1}, std::vector<Real>{-1, 0.5, 2});
  CHECK(decode_prediction(codec, wild).rgb == Tensor({3, 1, 1}, std::vector<Real>{0, 0.5, 1}));
}

TEST_CASE("decoding clamps out-of-range colors and rejects bad shapes") {
  const TaskCodec codec = TaskCodec::standard(Task::segmentation, 9);
  Tensor rgb({3, 1, 1}, Real(5));
  const RawTarget back = decode_prediction(codec, rgb);
  const Colormap& cm = codec.segmentation_colormap();
  CHECK(back.labels[0] == int(brute_nearest(cm, 1, 1, 1)));
  CHECK_THROWS_AS(decode_prediction(codec, Tensor({4, 1, 1})), ShapeError);
}

TEST_CASE("colormaps load from index r g b text") {
  const auto dir = std::filesystem::temp_directory_path() / "onestream_cmap_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "ok.txt");
    f << "# three classes\n0 0 0 0\n1 1 0 0\n2 0 0 1\n";
  }
  const Colormap cm = Colormap::load(dir / "ok.txt");
  CHECK(cm.size() == 3);
  CHECK(cm[1] == Rgb{1, 0, 0});
  {
    std::ofstream f(dir / "bad.txt");
    f << "0 0 0 0\n2 1 0 0\n";
  }
  CHECK_THROWS_AS(Colormap::load(dir / "bad.txt"), ConfigError);
  CHECK_THROWS_AS(Colormap::load(dir / "missing.txt"), IoError);
  std::filesystem::remove_all(dir);
}
