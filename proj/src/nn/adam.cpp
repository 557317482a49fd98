#include "omnishape/nn/adam.hpp"

#include <cmath>
#include <numbers>

#include "omnishape/core/error.hpp"

namespace omnishape::nn {

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0)) throw UsageError("peak_lr must be positive");
  if (warmup_steps < 0 || total_steps <= 0 || warmup_steps > total_steps) throw UsageError("need 0 <= warmup_steps <= total_steps");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
}

double learning_rate(const TrainConfig& cfg, long step) {
  if (step <= 0) return 0.0;
  if (step >= cfg.total_steps) return step == cfg.warmup_steps ? cfg.peak_lr : 0.0;
  if (step < cfg.warmup_steps) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, long step,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->shape(), 0.0);
      state.second_moment.emplace_back(p->shape(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  const double lr = learning_rate(cfg, step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor* g = grads[k];
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (m.shape() != p.shape()) throw ShapeError("adam_step: moment shape mismatch");
    // A parameter that received no gradient this step behaves like a zero gradient.
    const bool has_grad = g && g->size() == p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has_grad ? (*g)[i] : 0.0;
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEpsilon);
    }
  }
  state.step = step;
}

Adam::Adam(std::vector<Var> params, TrainConfig cfg) : params_(std::move(params)), cfg_(cfg) { cfg_.validate(); }

void Adam::step() {
  std::vector<Tensor*> ps;
  std::vector<const Tensor*> gs;
  for (auto& p : params_) {
    ps.push_back(&p.mutable_value());
    gs.push_back(&p.grad());
  }
  adam_step(ps, gs, state_, state_.step + 1, cfg_);
  for (auto& p : params_) p.zero_grad();
}

}  // namespace omnishape::nn
