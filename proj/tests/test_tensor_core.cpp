#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradient_oracle.hpp"
#include "onestream/errors.hpp"
#include "onestream/model.hpp"

using namespace onestream;
using onestream::testing::random_tensor;

TEST_CASE("tensor rejects data that does not match its shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<Real>(5)), ShapeError);
  Tensor t({2, 3}, Real(1.5));
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
  t[4] = std::numeric_limits<Real>::infinity();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS(t.reshaped({4, 2}));
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("tensor maps keep insertion order and reject duplicates") {
  TensorMap m;
  m.insert("b", Tensor({2}));
  m.insert("a", Tensor({3}));
  CHECK(m.entry(0).first == "b");
  CHECK(m.entry(1).first == "a");
  CHECK_THROWS(m.insert("a", Tensor({1})));
  CHECK(m.total_elements() == 5);
  TensorMap z = m.zeros_like();
  CHECK(z.same_layout(m));
  TensorMap other;
  other.insert("a", Tensor({3}));
  other.insert("b", Tensor({2}));
  CHECK_FALSE(other.same_layout(m));
  CHECK_THROWS_AS(m.require_same_layout(other, "test"), ShapeError);
}

TEST_CASE("reverse-mode gradients of every op match finite differences") {
  Rng rng(7);
  for (const auto& family : onestream::testing::op_families()) {
    for (int i = 0; i < 20; ++i) {
      auto [op, inputs] = family.draw(rng);
      const double err = onestream::testing::op_gradient_error(op, inputs, rng);
      INFO(family.name << " instance " << i);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("full-model gradients match finite differences") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    CHECK(onestream::testing::model_gradient_error(onestream::testing::small_mlp(i), rng) < 1e-3);
    CHECK(onestream::testing::model_gradient_error(onestream::testing::small_unet(i), rng) < 1e-3);
  }
}

TEST_CASE("scalar chain rule: y = w x with w=2, x=3, target 0") {
  Graph g;
  Var x = g.constant(Tensor({1, 1, 1}, Real(3)));
  Var w = g.parameter("w", Tensor({1, 1, 1, 1}, Real(2)));
  Var b = g.constant(Tensor({1}));
  Var y = ops::conv2d(g, x, w, b);
  Var loss = ops::masked_mse(g, y, Tensor({1, 1, 1}), Tensor({1, 1, 1}, Real(1)));
  CHECK(g.value(loss)[0] == doctest::Approx(36.0));
  g.backward(loss);
  CHECK(g.grad(w)[0] == doctest::Approx(36.0));

  // Same function through the finite-difference oracle.
  auto f = [](Real wv) { return (wv * 3) * (wv * 3); };
  const Real h = Real(1e-5);
  CHECK(double((f(2 + h) - f(2 - h)) / (2 * h)) == doctest::Approx(36.0).epsilon(1e-8));
}

TEST_CASE("build_model is deterministic and shape-closed") {
  ModelConfig c;
  c.kind = ModelKind::patch_mlp;
  c.resolution = 32;
  c.n_frames = 4;
  c.seed = 3;
  CHECK(build_model(c) == build_model(c));
  ModelConfig other = c;
  other.seed = 4;
  CHECK_FALSE(build_model(c) == build_model(other));
  Rng rng(1);
  const Tensor in = random_tensor({12, 32, 32}, rng, 0, 1);
  CHECK(predict(c, build_model(c), in).shape() == Shape{12, 32, 32});

  ModelConfig u;
  u.kind = ModelKind::tiny_unet;
  u.resolution = 16;
  u.n_frames = 2;
  u.width = 4;
  u.groups = 2;
  u.depth = 1;
  u.levels = 3;
  const Tensor in2 = random_tensor({6, 16, 16}, rng, 0, 1);
  CHECK(predict(u, build_model(u), in2).shape() == Shape{6, 16, 16});
}

TEST_CASE("resolutions incompatible with the architecture are config errors") {
  ModelConfig c;
  c.kind = ModelKind::patch_mlp;
  c.patch = 4;
  c.resolution = 30;
  CHECK_THROWS_AS(build_model(c), ConfigError);
  ModelConfig u;
  u.kind = ModelKind::tiny_unet;
  u.levels = 3;
  u.resolution = 18;
  CHECK_THROWS_AS(build_model(u), ConfigError);
  c.resolution = 32;
  c.n_frames = 0;
  CHECK_THROWS_AS(build_model(c), ConfigError);
}

TEST_CASE("tiny-unet parameter count follows its layer arithmetic") {
  ModelConfig u;
  u.kind = ModelKind::tiny_unet;
  u.n_frames = 1;
  u.resolution = 8;
  u.width = 4;
  u.depth = 1;
  u.levels = 2;
  u.groups = 2;
  u.attention = true;
  // stem 3->4 conv3: 112; enc0 block(4): 312; enc1 down 4->8: 296, block(8): 1200,
  // attention(8): 304; dec0 up 8->4: 292, block(4): 312; head norm 8, conv 4->3: 111.
  CHECK(build_model(u).total_elements() == 2947);

  // The closed form for any configuration.
  auto conv = [](std::size_t i, std::size_t o) { return 9 * i * o + o; };
  auto block = [&](std::size_t c) { return 2 * (2 * c) + 2 * conv(c, c); };
  for (int levels : {1, 2, 3}) {
    for (int depth : {1, 2}) {
      for (bool attn : {false, true}) {
        ModelConfig v = u;
        v.levels = levels;
        v.depth = depth;
        v.attention = attn;
        v.n_frames = 2;
        const std::size_t io = 6, w = 4;
        std::size_t n = conv(io, w);
        for (int l = 0; l < levels; ++l) {
          const std::size_t c = w << l;
          if (l > 0) n += conv(c / 2, c);
          n += depth * block(c);
          if (l == levels - 1 && attn) n += 2 * c + 4 * (c * c + c);
        }
        for (int l = levels - 2; l >= 0; --l) n += conv(w << (l + 1), w << l) + block(w << l);
        n += 2 * w + conv(w, io);
        CHECK(build_model(v).total_elements() == n);
      }
    }
  }
}

TEST_CASE("identity-initialized patch-mlp has zero loss and zero grads on its input") {
  ModelConfig c;
  c.kind = ModelKind::patch_mlp;
  c.resolution = 8;
  c.n_frames = 1;
  c.patch = 4;
  c.identity_init = true;
  c.residual = true;
  Rng rng(2);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0, 1);
  const LossAndGrad lg = value_and_grad(c, build_model(c), x, x, Tensor({1, 8, 8}, Real(1)));
  CHECK(lg.loss == 0);
  CHECK(squared_norm(lg.grads) == 0);
  const GradSet fd = finite_diff_grad(c, build_model(c), x, x, Tensor({1, 8, 8}, Real(1)), Real(1e-5));
  for (const auto& [name, t] : fd)
    for (Real v : t.data()) CHECK(std::abs(double(v)) < 1e-8);
}

TEST_CASE("non-finite intermediates name the offending layer") {
  ModelConfig c;
  c.kind = ModelKind::patch_mlp;
  c.resolution = 8;
  c.n_frames = 1;
  c.patch = 4;
  c.depth = 2;
  ParamSet p = build_model(c);
  p.at("embed.w")[0] = std::numeric_limits<Real>::infinity();
  Rng rng(3);
  const Tensor x = random_tensor({3, 8, 8}, rng, 0.5, 1);
  try {
    value_and_grad(c, p, x, x, Tensor({1, 8, 8}, Real(1)));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("embed") != std::string::npos);
  }
}

TEST_CASE("l2 pixel loss") {
  const Tensor ones({3, 2, 2}, Real(1)), zeros({3, 2, 2});
  const Tensor full({1, 2, 2}, Real(1));
  CHECK(l2_pixel_loss(ones, ones, full) == 0);
  CHECK(l2_pixel_loss(ones, zeros, full) == doctest::Approx(1.0));

  // Valid half differs by 1, invalid half by 3 (squared 9).
  Tensor pred({3, 2, 2});
  Tensor mask({1, 2, 2});
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) pred.at(ch, y, x) = y == 0 ? Real(1) : Real(3);
  mask.at(0, 0, 0) = mask.at(0, 0, 1) = 1;
  CHECK(l2_pixel_loss(pred, zeros, mask) == doctest::Approx(1.0));

  bool empty = false;
  CHECK(l2_pixel_loss(ones, zeros, Tensor({1, 2, 2}), &empty) == 0);
  CHECK(empty);
  CHECK_THROWS_AS(l2_pixel_loss(ones, Tensor({3, 2, 3}), full), ShapeError);
}

TEST_CASE("input-weight inflation") {
  Rng rng(5);
  const Tensor k = random_tensor({5, 3, 3, 3}, rng);
  CHECK(inflate_input_weights(k, 1) == k);
  CHECK_THROWS(inflate_input_weights(random_tensor({5, 4, 3, 3}, rng), 2));
  CHECK_THROWS(inflate_input_weights(k, 0));

  const Tensor ones({2, 3, 3, 3}, Real(1));
  const Tensor inflated = inflate_input_weights(ones, 4);
  CHECK(inflated.shape() == Shape{2, 12, 3, 3});
  for (Real v : inflated.data()) CHECK(v == Real(0.25));

  // Feeding four copies of a frame reproduces the single-frame response.
  const Tensor frame = random_tensor({3, 6, 6}, rng);
  Tensor stacked({12, 6, 6});
  for (std::size_t r = 0; r < 4; ++r)
    std::copy(frame.data().begin(), frame.data().end(), stacked.data().begin() + r * frame.size());
  const Tensor bias = random_tensor({5}, rng);
  Graph g1;
  const Tensor a = g1.value(ops::conv2d(g1, g1.constant(frame), g1.constant(k), g1.constant(bias)));
  Graph g2;
  const Tensor b = g2.value(
      ops::conv2d(g2, g2.constant(stacked), g2.constant(inflate_input_weights(k, 4)), g2.constant(bias)));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(double(a[i] - b[i])) < 1e-10);
}

TEST_CASE("value_and_grad is deterministic") {
  const ModelConfig c = onestream::testing::small_unet(9);
  Rng rng(4);
  const Tensor x = random_tensor({3, 4, 4}, rng, 0, 1), t = random_tensor({3, 4, 4}, rng, 0, 1);
  const Tensor m({1, 4, 4}, Real(1));
  const LossAndGrad a = value_and_grad(c, build_model(c), x, t, m);
  const LossAndGrad b = value_and_grad(c, build_model(c), x, t, m);
  CHECK(a.loss == b.loss);
  CHECK(a.grads == b.grads);
}
