#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "onestream/tensor.hpp"

namespace onestream {

/// Handle to a node in a Graph.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

/// Tape for one forward/backward pass. Nodes are appended in evaluation
/// order, so reverse insertion order is a valid topological order for the
/// backward sweep. A Graph is single-use and not thread-safe; build one per
/// evaluation.
class Graph {
 public:
  using Backward = std::function<void(Graph&, std::size_t self)>;

  /// Constant leaf; never receives a gradient.
  Var constant(Tensor value);
  /// Trainable leaf bound to a parameter name.
  Var parameter(const std::string& name, Tensor value);

  /// Appends an op result. Throws NumericError if `value` has a non-finite
  /// entry, naming the current scope and op.
  Var record(const char* op, Tensor value, std::vector<Var> parents,
             Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of `v`, allocated as zeros on first use.
  Tensor& grad(Var v);
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one element.
  void backward(Var root);

  /// Gradients of every parameter leaf, laid out like `like` (unused
  /// parameters get zeros).
  GradSet parameter_grads(const ParamSet& like) const;

  /// Label prefixed to numeric error messages, typically the layer name.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    Backward backward;
    bool requires_grad = false;
    std::string param_name;
  };

  std::vector<Node> nodes_;
  std::string scope_;
};

/// The closed set of differentiable ops the model zoo is built from.
namespace ops {

/// Rows of x (N, D) mapped through w (E, D) plus bias b (E): (N, E).
Var affine(Graph& g, Var x, Var w, Var b);

/// Stride-1 2D convolution with zero "same" padding: x (C, H, W),
/// w (O, C, k, k) with odd k, b (O) -> (O, H, W).
Var conv2d(Graph& g, Var x, Var w, Var b);

/// 2x2 average pooling, stride 2. H and W must be even.
Var avg_pool2(Graph& g, Var x);

/// 2x nearest-neighbor upsampling.
Var upsample2(Graph& g, Var x);

Var relu(Graph& g, Var x);

/// Group normalization over (C/groups channels x H x W) with per-channel
/// affine gamma (C), beta (C).
Var group_norm(Graph& g, Var x, Var gamma, Var beta, std::size_t groups,
               Real eps = Real(1e-5));

/// Elementwise sum of equal-shaped tensors (residual connections).
Var add(Graph& g, Var a, Var b);

/// (C, H, W) -> (H/p * W/p, C*p*p): one row per non-overlapping p x p patch,
/// patches in row-major grid order, features ordered (channel, dy, dx).
Var patchify(Graph& g, Var x, std::size_t patch);
/// Inverse of patchify.
Var unpatchify(Graph& g, Var tokens, const Shape& image_shape, std::size_t patch);

/// Single-head scaled dot-product attention over token rows: q, k, v (N, D).
Var attention(Graph& g, Var q, Var k, Var v);

/// Mean of squared differences over the entries selected by `mask`.
/// mask has shape (M, H, W) where M divides the channel count C of `pred`;
/// channel c uses mask plane c / (C / M). With no selected entries the loss
/// is 0 and `empty_mask` (when given) is set.
Var masked_mse(Graph& g, Var pred, const Tensor& target, const Tensor& mask,
               bool* empty_mask = nullptr);

}  // namespace ops

}  // namespace onestream
