#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "onestream/tensor.hpp"

namespace onestream {

enum class OptimizerKind { sgd, sgd_momentum, rmsprop, adam, adamw, adagrad };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::rmsprop;
  Real lr = Real(1e-4);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.99);
  Real eps = Real(1e-8);
  Real weight_decay = 0;
  bool bias_correction = false;
  bool eps_inside_sqrt = true;

  /// Conventional defaults per kind: RMSProp without bias correction and
  /// with eps inside the root; Adam/AdamW with bias correction, eps outside
  /// and beta2 = 0.999.
  static OptimizerConfig defaults_for(OptimizerKind kind);
  void validate() const;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Per-parameter moments. `first` is used by sgd_momentum/adam/adamw,
/// `second` by rmsprop/adam/adamw/adagrad; unused maps stay empty.
struct OptimizerState {
  std::int64_t step = 0;
  TensorMap first;
  TensorMap second;
};

/// Applies one update with learning rate `lr`. Weight decay is coupled
/// (added to the gradient) for every kind except adamw, where it is
/// decoupled. Throws NumericError on a non-finite gradient and ShapeError
/// on a layout mismatch.
void optimizer_step(const OptimizerConfig& config, OptimizerState& state, ParamSet& params,
                    const GradSet& grad, Real lr);

enum class ScheduleKind {
  constant,
  linear_decay,
  cosine_pow,
  exponential_decay,
  one_cycle,
  cosine_restarts
};

std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

struct LRSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  Real base = Real(1e-4);
  std::int64_t warmup = 1000;
  std::int64_t total = 10000;
  Real power = 2;            // cosine_pow exponent
  Real decay_rate = Real(0.01);  // exponential_decay: factor reached at `total`
  Real one_cycle_peak = Real(0.3);   // fraction of the post-warmup span spent rising
  Real one_cycle_div = 25;           // final lr = base / div
  Real restart_fraction = Real(0.25);  // cosine_restarts period, fraction of span

  void validate() const;

  friend bool operator==(const LRSchedule&, const LRSchedule&) = default;
};

/// Learning rate at step t. Linear warmup base * t / warmup for t < warmup,
/// then the kind's closed form on the post-warmup fraction
/// u = (t - warmup) / (total - warmup), clamped to [0, 1].
Real lr_at(const LRSchedule& schedule, std::int64_t t);

/// Sums incoming gradients and releases their mean every `steps_per_update`.
class Accumulator {
 public:
  explicit Accumulator(int steps_per_update = 1);

  /// Adds `grads`. Returns the arithmetic mean (sum / n, summed in arrival
  /// order) once n gradients have arrived, resetting the buffer.
  std::optional<GradSet> add(const GradSet& grads);

  int steps_per_update() const { return n_; }
  int count() const { return count_; }
  const GradSet& sum() const { return sum_; }

  /// Restores a partially filled buffer (checkpoint resume).
  void restore(GradSet sum, int count);

 private:
  int n_;
  int count_ = 0;
  GradSet sum_;
};

/// L2 anchor towards periodically refreshed weights.
struct AnchorState {
  ParamSet anchor;
  Real strength = 0;
  std::int64_t refresh_interval = 0;
};

/// Gradient of strength * ||params - anchor||^2, that is 2*strength*(p - a).
GradSet anchor_penalty_grad(const ParamSet& params, const AnchorState& anchor);

/// a += b, entrywise over matching layouts.
void add_in_place(TensorMap& a, const TensorMap& b);

}  // namespace onestream
