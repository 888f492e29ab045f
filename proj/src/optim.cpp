#include "onestream/optim.hpp"

#include <cmath>
#include <numbers>

#include "onestream/errors.hpp"

namespace onestream {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::adagrad: return "adagrad";
  }
  return "?";
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::sgd_momentum, OptimizerKind::rmsprop,
                 OptimizerKind::adam, OptimizerKind::adamw, OptimizerKind::adagrad})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown optimizer '" + name + "'", "optimizer.kind");
}

OptimizerConfig OptimizerConfig::defaults_for(OptimizerKind kind) {
  OptimizerConfig c;
  c.kind = kind;
  switch (kind) {
    case OptimizerKind::adam:
    case OptimizerKind::adamw:
      c.beta2 = Real(0.999);
      c.bias_correction = true;
      c.eps_inside_sqrt = false;
      break;
    case OptimizerKind::adagrad:
      c.eps_inside_sqrt = false;
      break;
    default:
      break;
  }
  return c;
}

void OptimizerConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("must be > 0", "optimizer.lr");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("must be in [0, 1)", "optimizer.beta1");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("must be in [0, 1)", "optimizer.beta2");
  if (!(eps > 0)) throw ConfigError("must be > 0", "optimizer.eps");
  if (!(weight_decay >= 0)) throw ConfigError("must be >= 0", "optimizer.weight_decay");
}

namespace {

void ensure_buffer(TensorMap& buf, const ParamSet& params) {
  if (buf.empty()) buf = params.zeros_like();
  else params.require_same_layout(buf, "optimizer state");
}

inline Real denom(Real v, Real eps, bool inside) {
  return inside ? std::sqrt(v + eps) : std::sqrt(v) + eps;
}

}  // namespace

void optimizer_step(const OptimizerConfig& cfg, OptimizerState& state, ParamSet& params,
                    const GradSet& grad, Real lr) {
  params.require_same_layout(grad, "optimizer gradient");
  for (const auto& [name, g] : grad)
    if (!g.all_finite()) throw NumericError("non-finite gradient for '" + name + "'");

  const bool uses_first = cfg.kind == OptimizerKind::sgd_momentum ||
                          cfg.kind == OptimizerKind::adam || cfg.kind == OptimizerKind::adamw;
  const bool uses_second = cfg.kind == OptimizerKind::rmsprop ||
                           cfg.kind == OptimizerKind::adam ||
                           cfg.kind == OptimizerKind::adamw ||
                           cfg.kind == OptimizerKind::adagrad;
  if (uses_first) ensure_buffer(state.first, params);
  if (uses_second) ensure_buffer(state.second, params);

  state.step += 1;
  const Real t = Real(state.step);
  const Real c1 = cfg.bias_correction ? Real(1) - std::pow(cfg.beta1, t) : Real(1);
  const Real c2 = cfg.bias_correction ? Real(1) - std::pow(cfg.beta2, t) : Real(1);
  const bool coupled_decay = cfg.kind != OptimizerKind::adamw && cfg.weight_decay != Real(0);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.entry(i).second;
    const Tensor& gt = grad.entry(i).second;
    Real* m = uses_first ? state.first.entry(i).second.raw() : nullptr;
    Real* v = uses_second ? state.second.entry(i).second.raw() : nullptr;
    for (std::size_t j = 0; j < p.size(); ++j) {
      Real g = gt[j];
      if (coupled_decay) g += cfg.weight_decay * p[j];
      switch (cfg.kind) {
        case OptimizerKind::sgd:
          p[j] -= lr * g;
          break;
        case OptimizerKind::sgd_momentum:
          m[j] = cfg.beta1 * m[j] + g;
          p[j] -= lr * m[j];
          break;
        case OptimizerKind::rmsprop:
          v[j] = cfg.beta2 * v[j] + (Real(1) - cfg.beta2) * g * g;
          p[j] -= lr * g / denom(v[j], cfg.eps, cfg.eps_inside_sqrt);
          break;
        case OptimizerKind::adagrad:
          v[j] += g * g;
          p[j] -= lr * g / denom(v[j], cfg.eps, cfg.eps_inside_sqrt);
          break;
        case OptimizerKind::adam:
        case OptimizerKind::adamw: {
          m[j] = cfg.beta1 * m[j] + (Real(1) - cfg.beta1) * g;
          v[j] = cfg.beta2 * v[j] + (Real(1) - cfg.beta2) * g * g;
          const Real mhat = cfg.bias_correction ? m[j] / c1 : m[j];
          const Real vhat = cfg.bias_correction ? v[j] / c2 : v[j];
          if (cfg.kind == OptimizerKind::adamw && cfg.weight_decay != Real(0))
            p[j] -= lr * cfg.weight_decay * p[j];
          p[j] -= lr * mhat / denom(vhat, cfg.eps, cfg.eps_inside_sqrt);
          break;
        }
      }
    }
  }
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear_decay: return "linear_decay";
    case ScheduleKind::cosine_pow: return "cosine_pow";
    case ScheduleKind::exponential_decay: return "exponential_decay";
    case ScheduleKind::one_cycle: return "one_cycle";
    case ScheduleKind::cosine_restarts: return "cosine_restarts";
  }
  return "?";
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  for (auto k : {ScheduleKind::constant, ScheduleKind::linear_decay, ScheduleKind::cosine_pow,
                 ScheduleKind::exponential_decay, ScheduleKind::one_cycle,
                 ScheduleKind::cosine_restarts})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown schedule '" + name + "'", "schedule.kind");
}

void LRSchedule::validate() const {
  if (!(base > 0)) throw ConfigError("must be > 0", "optimizer.lr");
  if (warmup < 0) throw ConfigError("must be >= 0", "schedule.warmup");
  if (total < 1) throw ConfigError("must be positive", "schedule.total");
  if (warmup > total) throw ConfigError("warmup exceeds total steps", "schedule.warmup");
  if (!(power > 0)) throw ConfigError("must be > 0", "schedule.power");
  if (!(decay_rate > 0 && decay_rate <= 1))
    throw ConfigError("must be in (0, 1]", "schedule.decay_rate");
  if (!(one_cycle_peak > 0 && one_cycle_peak < 1))
    throw ConfigError("must be in (0, 1)", "schedule.one_cycle_peak");
  if (!(one_cycle_div >= 1)) throw ConfigError("must be >= 1", "schedule.one_cycle_div");
  if (!(restart_fraction > 0 && restart_fraction <= 1))
    throw ConfigError("must be in (0, 1]", "schedule.restart_fraction");
}

Real lr_at(const LRSchedule& s, std::int64_t t) {
  if (t < 0) throw std::invalid_argument("lr_at: negative step");
  if (t < s.warmup) return s.base * Real(t) / Real(s.warmup);
  const std::int64_t span = s.total - s.warmup;
  const Real u = span > 0 ? std::min(Real(1), Real(t - s.warmup) / Real(span)) : Real(1);
  constexpr Real pi = std::numbers::pi_v<Real>;
  switch (s.kind) {
    case ScheduleKind::constant:
      return s.base;
    case ScheduleKind::linear_decay:
      return s.base * (Real(1) - u);
    case ScheduleKind::cosine_pow:
      return s.base * std::pow(Real(0.5) * (Real(1) + std::cos(pi * u)), s.power);
    case ScheduleKind::exponential_decay:
      return s.base * std::pow(s.decay_rate, u);
    case ScheduleKind::one_cycle: {
      // The rise starts where warmup ended (base) or, without warmup, at
      // base / div; the fall ends at base / div.
      const Real floor = s.base / s.one_cycle_div;
      const Real start = s.warmup > 0 ? s.base : floor;
      if (u < s.one_cycle_peak) return start + (s.base - start) * (u / s.one_cycle_peak);
      return s.base + (floor - s.base) * ((u - s.one_cycle_peak) / (Real(1) - s.one_cycle_peak));
    }
    case ScheduleKind::cosine_restarts: {
      if (u >= Real(1)) return Real(0);
      const Real phase = std::fmod(u, s.restart_fraction) / s.restart_fraction;
      return s.base * Real(0.5) * (Real(1) + std::cos(pi * phase));
    }
  }
  return s.base;
}

Accumulator::Accumulator(int steps_per_update) : n_(steps_per_update) {
  if (n_ < 1) throw ConfigError("must be >= 1", "steps_per_update");
}

void add_in_place(TensorMap& a, const TensorMap& b) {
  a.require_same_layout(b, "accumulate");
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor& x = a.entry(i).second;
    const Tensor& y = b.entry(i).second;
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += y[j];
  }
}

std::optional<GradSet> Accumulator::add(const GradSet& grads) {
  if (n_ == 1) return grads;
  if (count_ == 0) sum_ = grads;
  else add_in_place(sum_, grads);
  if (++count_ < n_) return std::nullopt;
  GradSet mean = std::move(sum_);
  const Real inv = Real(n_);
  for (auto& [name, t] : mean)
    for (Real& v : t.data()) v /= inv;
  sum_ = GradSet{};
  count_ = 0;
  return mean;
}

void Accumulator::restore(GradSet sum, int count) {
  if (count < 0 || count >= n_) throw ConfigError("accumulator count out of range");
  sum_ = std::move(sum);
  count_ = count;
}

GradSet anchor_penalty_grad(const ParamSet& params, const AnchorState& anchor) {
  params.require_same_layout(anchor.anchor, "anchor");
  GradSet out = params.zeros_like();
  if (anchor.strength == Real(0)) return out;
  const Real k = Real(2) * anchor.strength;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.entry(i).second;
    const Tensor& a = anchor.anchor.entry(i).second;
    Tensor& d = out.entry(i).second;
    for (std::size_t j = 0; j < p.size(); ++j) d[j] = k * (p[j] - a[j]);
  }
  return out;
}

}  // namespace onestream
