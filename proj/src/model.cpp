#include "onestream/model.hpp"

#include <cmath>

#include "onestream/errors.hpp"
#include "onestream/rng.hpp"

namespace onestream {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::tiny_unet ? "tiny_unet" : "patch_mlp";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "tiny_unet" || name == "tiny-unet") return ModelKind::tiny_unet;
  if (name == "patch_mlp" || name == "patch-mlp") return ModelKind::patch_mlp;
  throw ConfigError("unknown model kind '" + name + "'", "model.kind");
}

int ModelConfig::downsampling() const {
  return kind == ModelKind::tiny_unet ? (1 << (levels - 1)) : patch;
}

void ModelConfig::validate() const {
  if (n_frames < 1) throw ConfigError("must be >= 1", "task.n_frames");
  if (resolution < 1) throw ConfigError("must be positive", "resolution");
  if (width < 1) throw ConfigError("must be positive", "model.width");
  if (depth < (kind == ModelKind::patch_mlp ? 1 : 0))
    throw ConfigError("too small", "model.depth");
  if (kind == ModelKind::tiny_unet) {
    if (levels < 1 || levels > 6) throw ConfigError("must be in [1, 6]", "model.levels");
    if (groups < 1 || width % groups)
      throw ConfigError("must divide model.width", "model.groups");
  } else {
    if (patch < 1) throw ConfigError("must be positive", "model.patch");
    if (identity_init && !residual)
      throw ConfigError("identity_init requires residual", "model.identity_init");
  }
  if (resolution % downsampling())
    throw ConfigError("resolution " + std::to_string(resolution) +
                          " is not divisible by the model's downsampling factor " +
                          std::to_string(downsampling()),
                      "resolution");
}

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(Rng::mix(seed, 0x1417)) {}

  Tensor uniform(Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(double(fan_in));
    for (Real& v : t.data()) v = Real(rng_.uniform(-bound, bound));
    return t;
  }

 private:
  Rng rng_;
};

void add_conv(ParamSet& p, Initializer& init, const std::string& name, std::size_t in,
              std::size_t out, std::size_t k = 3) {
  p.insert(name + ".w", init.uniform({out, in, k, k}, in * k * k));
  p.insert(name + ".b", Tensor({out}));
}

void add_norm(ParamSet& p, const std::string& name, std::size_t channels) {
  p.insert(name + ".gamma", Tensor({channels}, Real(1)));
  p.insert(name + ".beta", Tensor({channels}));
}

void add_affine(ParamSet& p, Initializer& init, const std::string& name, std::size_t in,
                std::size_t out) {
  p.insert(name + ".w", init.uniform({out, in}, in));
  p.insert(name + ".b", Tensor({out}));
}

void add_res_block(ParamSet& p, Initializer& init, const std::string& name, std::size_t c) {
  add_norm(p, name + ".gn1", c);
  add_conv(p, init, name + ".conv1", c, c);
  add_norm(p, name + ".gn2", c);
  add_conv(p, init, name + ".conv2", c, c);
}

ParamSet build_unet(const ModelConfig& cfg) {
  Initializer init(cfg.seed);
  ParamSet p;
  const std::size_t io = cfg.channels();
  add_conv(p, init, "stem", io, cfg.level_channels(0));
  for (int l = 0; l < cfg.levels; ++l) {
    const std::size_t c = cfg.level_channels(l);
    const std::string lvl = "enc" + std::to_string(l);
    if (l > 0) add_conv(p, init, lvl + ".down", cfg.level_channels(l - 1), c);
    for (int b = 0; b < cfg.depth; ++b) add_res_block(p, init, lvl + "." + std::to_string(b), c);
    if (l == cfg.levels - 1 && cfg.attention) {
      add_norm(p, "attn.gn", c);
      for (const char* m : {"q", "k", "v", "out"}) add_affine(p, init, std::string("attn.") + m, c, c);
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string lvl = "dec" + std::to_string(l);
    add_conv(p, init, lvl + ".up", cfg.level_channels(l + 1), cfg.level_channels(l));
    add_res_block(p, init, lvl + ".0", cfg.level_channels(l));
  }
  add_norm(p, "head.gn", cfg.level_channels(0));
  add_conv(p, init, "head", cfg.level_channels(0), io);
  return p;
}

ParamSet build_mlp(const ModelConfig& cfg) {
  Initializer init(cfg.seed);
  ParamSet p;
  const std::size_t d = std::size_t(cfg.channels()) * cfg.patch * cfg.patch;
  add_affine(p, init, "embed", d, cfg.width);
  for (int i = 1; i < cfg.depth; ++i) add_affine(p, init, "hidden" + std::to_string(i), cfg.width, cfg.width);
  add_affine(p, init, "unembed", cfg.width, d);
  if (cfg.identity_init) {
    p.at("unembed.w").fill(Real(0));
    p.at("unembed.b").fill(Real(0));
  }
  return p;
}

class Binder {
 public:
  Binder(Graph& g, const ParamSet& p) : g_(g), p_(p) {}
  Var operator()(const std::string& name) { return g_.parameter(name, p_.at(name)); }

 private:
  Graph& g_;
  const ParamSet& p_;
};

Var conv(Graph& g, Binder& bind, const std::string& name, Var x) {
  g.set_scope(name);
  return ops::conv2d(g, x, bind(name + ".w"), bind(name + ".b"));
}

Var norm_relu(Graph& g, Binder& bind, const std::string& name, Var x, std::size_t groups) {
  g.set_scope(name);
  return ops::relu(g, ops::group_norm(g, x, bind(name + ".gamma"), bind(name + ".beta"), groups));
}

Var res_block(Graph& g, Binder& bind, const std::string& name, Var x, std::size_t groups) {
  Var h = norm_relu(g, bind, name + ".gn1", x, groups);
  h = conv(g, bind, name + ".conv1", h);
  h = norm_relu(g, bind, name + ".gn2", h, groups);
  h = conv(g, bind, name + ".conv2", h);
  g.set_scope(name);
  return ops::add(g, h, x);
}

Var attention_block(Graph& g, Binder& bind, Var x, std::size_t groups) {
  const Shape shape = g.value(x).shape();
  g.set_scope("attn.gn");
  Var h = ops::group_norm(g, x, bind("attn.gn.gamma"), bind("attn.gn.beta"), groups);
  g.set_scope("attn");
  Var tokens = ops::patchify(g, h, 1);
  auto proj = [&](const char* m, Var in) {
    const std::string n = std::string("attn.") + m;
    return ops::affine(g, in, bind(n + ".w"), bind(n + ".b"));
  };
  Var a = ops::attention(g, proj("q", tokens), proj("k", tokens), proj("v", tokens));
  Var o = ops::unpatchify(g, proj("out", a), shape, 1);
  return ops::add(g, x, o);
}

Var forward_unet(Graph& g, const ModelConfig& cfg, Binder& bind, Var x) {
  const std::size_t groups = cfg.groups;
  Var h = conv(g, bind, "stem", x);
  std::vector<Var> skips;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string lvl = "enc" + std::to_string(l);
    if (l > 0) {
      g.set_scope(lvl + ".pool");
      h = conv(g, bind, lvl + ".down", ops::avg_pool2(g, h));
    }
    for (int b = 0; b < cfg.depth; ++b) h = res_block(g, bind, lvl + "." + std::to_string(b), h, groups);
    if (l == cfg.levels - 1 && cfg.attention) h = attention_block(g, bind, h, groups);
    skips.push_back(h);
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string lvl = "dec" + std::to_string(l);
    g.set_scope(lvl + ".upsample");
    h = conv(g, bind, lvl + ".up", ops::upsample2(g, h));
    g.set_scope(lvl + ".skip");
    h = ops::add(g, h, skips[l]);
    h = res_block(g, bind, lvl + ".0", h, groups);
  }
  h = norm_relu(g, bind, "head.gn", h, groups);
  return conv(g, bind, "head", h);
}

Var forward_mlp(Graph& g, const ModelConfig& cfg, Binder& bind, Var x) {
  const Shape shape = g.value(x).shape();
  g.set_scope("patchify");
  Var t = ops::patchify(g, x, cfg.patch);
  g.set_scope("embed");
  t = ops::relu(g, ops::affine(g, t, bind("embed.w"), bind("embed.b")));
  for (int i = 1; i < cfg.depth; ++i) {
    const std::string n = "hidden" + std::to_string(i);
    g.set_scope(n);
    t = ops::relu(g, ops::affine(g, t, bind(n + ".w"), bind(n + ".b")));
  }
  g.set_scope("unembed");
  t = ops::affine(g, t, bind("unembed.w"), bind("unembed.b"));
  Var y = ops::unpatchify(g, t, shape, cfg.patch);
  if (cfg.residual) y = ops::add(g, y, x);
  return y;
}

}  // namespace

ParamSet build_model(const ModelConfig& config) {
  config.validate();
  return config.kind == ModelKind::tiny_unet ? build_unet(config) : build_mlp(config);
}

Var forward(Graph& graph, const ModelConfig& config, const ParamSet& params, Var input) {
  const Shape expected{std::size_t(config.channels()), std::size_t(config.resolution),
                       std::size_t(config.resolution)};
  if (graph.value(input).shape() != expected)
    throw ShapeError("model input " + shape_string(graph.value(input).shape()) +
                     ", expected " + shape_string(expected));
  Binder bind(graph, params);
  Var out = config.kind == ModelKind::tiny_unet ? forward_unet(graph, config, bind, input)
                                                : forward_mlp(graph, config, bind, input);
  graph.set_scope({});
  return out;
}

Tensor predict(const ModelConfig& config, const ParamSet& params, const Tensor& input) {
  Graph g;
  Var y = forward(g, config, params, g.constant(input));
  return g.value(y);
}

Real l2_pixel_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
                   bool* empty_mask) {
  Graph g;
  Var p = g.constant(pred);
  return g.value(ops::masked_mse(g, p, target, mask, empty_mask))[0];
}

LossAndGrad value_and_grad(const ModelConfig& config, const ParamSet& params,
                           const Tensor& input, const Tensor& target, const Tensor& mask) {
  Graph g;
  Var y = forward(g, config, params, g.constant(input));
  LossAndGrad out;
  g.set_scope("loss");
  Var loss = ops::masked_mse(g, y, target, mask, &out.empty_mask);
  g.backward(loss);
  out.loss = g.value(loss)[0];
  out.grads = g.parameter_grads(params);
  out.prediction = g.value(y);
  return out;
}

GradSet finite_diff_grad(const ModelConfig& config, const ParamSet& params,
                         const Tensor& input, const Tensor& target, const Tensor& mask,
                         Real h) {
  if (!(h > Real(0))) throw std::invalid_argument("finite_diff_grad: h must be positive");
  ParamSet probe = params;
  GradSet out = params.zeros_like();
  auto loss_at = [&]() {
    return l2_pixel_loss(predict(config, probe, input), target, mask);
  };
  for (std::size_t i = 0; i < probe.size(); ++i) {
    Tensor& t = probe.entry(i).second;
    Tensor& d = out.entry(i).second;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const Real orig = t[j];
      t[j] = orig + h;
      const Real up = loss_at();
      t[j] = orig - h;
      const Real down = loss_at();
      t[j] = orig;
      d[j] = (up - down) / (Real(2) * h);
    }
  }
  return out;
}

Tensor inflate_input_weights(const Tensor& kernel, int replication) {
  if (replication < 1) throw std::invalid_argument("inflate: replication must be >= 1");
  if (kernel.rank() < 2 || kernel.dim(1) != 3)
    throw ShapeError("inflate: kernel " + shape_string(kernel.shape()) +
                     " must have 3 input channels on axis 1");
  Shape shape = kernel.shape();
  const std::size_t out_ch = shape[0];
  const std::size_t inner = kernel.size() / (out_ch * 3);
  shape[1] = 3 * std::size_t(replication);
  Tensor result(shape);
  const Real scale = Real(1) / Real(replication);
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t r = 0; r < std::size_t(replication); ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        const Real* src = kernel.raw() + (o * 3 + c) * inner;
        Real* dst = result.raw() + (o * shape[1] + r * 3 + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] = replication == 1 ? src[i] : src[i] * scale;
      }
  return result;
}

}  // namespace onestream
