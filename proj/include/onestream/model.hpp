#pragma once

#include <cstdint>
#include <string>

#include "onestream/autodiff.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

enum class ModelKind { tiny_unet, patch_mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Pixel-to-pixel model description. Input and output both carry
/// 3 * n_frames channels (frames stacked along the channel axis).
struct ModelConfig {
  ModelKind kind = ModelKind::patch_mlp;
  int n_frames = 4;
  int resolution = 32;
  // tiny-unet: base channel count; patch-mlp: hidden units.
  int width = 16;
  // tiny-unet: residual blocks per encoder level; patch-mlp: hidden layers.
  int depth = 2;
  int levels = 3;
  int patch = 4;
  bool attention = true;
  int groups = 4;
  // patch-mlp only: output = input + mlp(input).
  bool residual = true;
  // patch-mlp only: zero the output layer so the model starts as identity.
  bool identity_init = false;
  std::uint64_t seed = 0;

  int channels() const { return 3 * n_frames; }
  /// Spatial factor the resolution must be divisible by.
  int downsampling() const;
  /// Channel count at a unet level.
  int level_channels(int level) const { return width << level; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Deterministic initialization: fan-in scaled uniform U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in)) for weights, zeros for biases, ones for norm gains.
ParamSet build_model(const ModelConfig& config);

/// Records the model's forward pass on `graph`. Parameters become named
/// leaves of the graph.
Var forward(Graph& graph, const ModelConfig& config, const ParamSet& params, Var input);

/// Forward pass without gradient bookkeeping beyond the tape itself.
Tensor predict(const ModelConfig& config, const ParamSet& params, const Tensor& input);

/// Mean squared error over valid (pixel, channel) entries; the mask plane
/// for channel c is c / (C / mask_planes). Returns 0 and sets `empty_mask`
/// when nothing is valid.
Real l2_pixel_loss(const Tensor& pred, const Tensor& target, const Tensor& mask,
                   bool* empty_mask = nullptr);

struct LossAndGrad {
  Real loss = 0;
  GradSet grads;
  Tensor prediction;
  bool empty_mask = false;
};

LossAndGrad value_and_grad(const ModelConfig& config, const ParamSet& params,
                           const Tensor& input, const Tensor& target, const Tensor& mask);

/// Central differences (f(p+h) - f(p-h)) / 2h for every parameter entry.
GradSet finite_diff_grad(const ModelConfig& config, const ParamSet& params,
                         const Tensor& input, const Tensor& target, const Tensor& mask,
                         Real h);

/// Expands a first-layer kernel whose axis 1 has 3 (RGB) input channels to
/// 3 * replication channels. Each replica is the original divided by
/// `replication`, so feeding `replication` copies of one frame reproduces
/// the original response.
Tensor inflate_input_weights(const Tensor& kernel, int replication);

}  // namespace onestream
