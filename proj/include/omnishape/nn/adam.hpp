#pragma once

#include <cstdint>
#include <vector>

#include "omnishape/nn/autograd.hpp"

namespace omnishape::nn {

struct TrainConfig {
  double peak_lr = 1e-3;
  long warmup_steps = 500;
  long total_steps = 10000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

// Linear warmup to peak_lr at warmup_steps, then cosine decay reaching 0 at total_steps.
// Steps are 1-based update counts; values past total_steps clamp to 0.
double learning_rate(const TrainConfig& cfg, long step);

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

// One bias-corrected Adam update at 1-based `step`. Moments are lazily sized on first use.
void adam_step(std::vector<Tensor*> params, const std::vector<const Tensor*>& grads, AdamState& state, long step,
               const TrainConfig& cfg);

// Convenience wrapper over graph parameters: applies the update from their accumulated
// gradients, then clears them.
class Adam {
 public:
  Adam(std::vector<Var> params, TrainConfig cfg);

  void step();
  long steps_taken() const { return state_.step; }
  double current_lr() const { return learning_rate(cfg_, state_.step); }

  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  TrainConfig cfg_;
  AdamState state_;
};

}  // namespace omnishape::nn
