#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "omnishape/core/rng.hpp"
#include "omnishape/diffusion/networks.hpp"
#include "omnishape/nn/adam.hpp"
#include "omnishape/nn/training_state.hpp"

namespace omnishape::diffusion {

// With probability `prob` per sample, zero conditioning channels
// [first_channel, first_channel + channel_count) (the null token). Channels index the
// first axis of the per-sample conditioning shape.
struct ConditioningDrop {
  std::size_t first_channel = 0;
  std::size_t channel_count = std::numeric_limits<std::size_t>::max();
  double prob = 0.0;
};

struct NoisedBatch {
  nn::Tensor u_t, eps, cond;
  std::vector<double> t;
  // Per sample: 1 if any drop rule fired, 2 if the whole conditioning ended up null.
  std::vector<int> dropped;
  std::size_t fully_null() const;
};

// Draws t uniformly from {1..T}, eps ~ N(0, I), forms u_t and applies the drop rules.
// Empty `cond` keeps the batch unconditional.
NoisedBatch noise_batch(const nn::Tensor& u0, const nn::Tensor& cond, const NoiseSchedule& sched, Rng& rng,
                        std::span<const ConditioningDrop> drops);

// Mean squared error between eps and the prediction, per element.
nn::Var training_loss(const TrainableDenoiser& den, const NoisedBatch& batch);
double training_loss(const Denoiser& den, const NoisedBatch& batch);
// One-shot form: noise the batch and score it. `instrument` receives the noised batch.
double training_loss(const Denoiser& den, const nn::Tensor& u0, const nn::Tensor& cond, const NoiseSchedule& sched, Rng& rng,
                     double drop_prob, NoisedBatch* instrument = nullptr);

// Fills (u0, cond) with one training batch of the requested size.
using BatchSource = std::function<void(Rng& rng, std::size_t batch, nn::Tensor& u0, nn::Tensor& cond)>;

struct DenoiserTrainConfig {
  nn::TrainConfig train{.peak_lr = 1e-3, .warmup_steps = 100, .total_steps = 2000, .batch_size = 32, .seed = 0};
  std::vector<ConditioningDrop> drops;
};

// Adam over the denoiser's parameters. One RNG drives batch selection and noising, so
// saving and restoring the state resumes the run bit-exactly.
class DenoiserTrainer {
 public:
  DenoiserTrainer(TrainableDenoiser& den, const NoiseSchedule& sched, BatchSource source, DenoiserTrainConfig cfg);

  // One update; returns the minibatch loss. DivergenceError (with the step) on a
  // non-finite loss or parameter.
  double step();
  long steps_taken() const { return adam_.steps_taken(); }
  bool done() const { return steps_taken() >= cfg_.train.total_steps; }

  nn::TrainingState state() const;
  void restore(const nn::TrainingState& s);

 private:
  TrainableDenoiser& den_;
  const NoiseSchedule& sched_;
  BatchSource source_;
  DenoiserTrainConfig cfg_;
  std::vector<nn::Var> params_;
  nn::Adam adam_;
  Rng rng_;
};

}  // namespace omnishape::diffusion
