#include "omnishape/diffusion/training.hpp"

#include <algorithm>
#include <cmath>

#include "omnishape/core/error.hpp"
#include "omnishape/nn/ops.hpp"

namespace omnishape::diffusion {

std::size_t NoisedBatch::fully_null() const {
  return static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), 2));
}

NoisedBatch noise_batch(const nn::Tensor& u0, const nn::Tensor& cond, const NoiseSchedule& sched, Rng& rng,
                        std::span<const ConditioningDrop> drops) {
  if (u0.rank() < 2) throw ShapeError("training batch must be [B, ...]");
  const std::size_t b = u0.dim(0), n = u0.size() / b;
  NoisedBatch out;
  out.t.resize(b);
  out.dropped.assign(b, 0);
  out.eps = nn::Tensor(u0.shape());
  out.u_t = nn::Tensor(u0.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const long t = 1 + static_cast<long>(rng.index(static_cast<std::size_t>(sched.steps())));
    out.t[i] = static_cast<double>(t);
    const double ab = sched.alpha_bar(t), a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t k = 0; k < n; ++k) {
      const double e = rng.normal();
      out.eps[i * n + k] = e;
      out.u_t[i * n + k] = a * u0[i * n + k] + s * e;
    }
  }
  out.cond = cond;
  if (cond.empty()) return out;
  if (cond.rank() < 2 || cond.dim(0) != b) throw ShapeError("conditioning batch differs from state batch");
  const std::size_t per = cond.size() / b, channels = cond.dim(1), plane = per / channels;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<bool> cleared(channels, false);
    for (const auto& d : drops) {
      if (!rng.bernoulli(d.prob)) continue;
      out.dropped[i] = 1;
      const std::size_t end = d.channel_count >= channels ? channels : std::min(channels, d.first_channel + d.channel_count);
      for (std::size_t c = d.first_channel; c < end; ++c) {
        cleared[c] = true;
        std::fill_n(out.cond.ptr() + i * per + c * plane, plane, 0.0);
      }
    }
    if (std::all_of(cleared.begin(), cleared.end(), [](bool v) { return v; })) out.dropped[i] = 2;
  }
  return out;
}

nn::Var training_loss(const TrainableDenoiser& den, const NoisedBatch& batch) {
  return nn::mse(den.epsilon_graph(nn::constant(batch.u_t), batch.t, batch.cond), nn::constant(batch.eps));
}

double training_loss(const Denoiser& den, const NoisedBatch& batch) {
  const nn::Tensor pred = den.epsilon(batch.u_t, batch.t, batch.cond);
  if (pred.shape() != batch.eps.shape()) throw ShapeError("denoiser output does not match the state shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - batch.eps[i]) * (pred[i] - batch.eps[i]);
  return acc / static_cast<double>(pred.size());
}

double training_loss(const Denoiser& den, const nn::Tensor& u0, const nn::Tensor& cond, const NoiseSchedule& sched, Rng& rng,
                     double drop_prob, NoisedBatch* instrument) {
  const ConditioningDrop all{.prob = drop_prob};
  NoisedBatch batch = noise_batch(u0, cond, sched, rng, std::span<const ConditioningDrop>(&all, 1));
  const double loss = training_loss(den, batch);
  if (instrument) *instrument = std::move(batch);
  return loss;
}

DenoiserTrainer::DenoiserTrainer(TrainableDenoiser& den, const NoiseSchedule& sched, BatchSource source, DenoiserTrainConfig cfg)
    : den_(den),
      sched_(sched),
      source_(std::move(source)),
      cfg_(std::move(cfg)),
      params_(den.parameters()),
      adam_(params_, cfg_.train),
      rng_(cfg_.train.seed) {
  cfg_.train.validate();
}

double DenoiserTrainer::step() {
  const long next = steps_taken() + 1;
  nn::Tensor u0, cond;
  source_(rng_, cfg_.train.batch_size, u0, cond);
  const NoisedBatch batch = noise_batch(u0, cond, sched_, rng_, cfg_.drops);
  const nn::Var loss = training_loss(den_, batch);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw DivergenceError("non-finite denoiser loss", next);
  nn::backward(loss);
  adam_.step();
  for (const auto& p : params_)
    if (!p.value().all_finite()) throw DivergenceError("non-finite denoiser parameter", next);
  return value;
}

nn::TrainingState DenoiserTrainer::state() const { return nn::capture_state(params_, adam_.state(), rng_.state()); }

void DenoiserTrainer::restore(const nn::TrainingState& s) {
  nn::restore_params(s, params_);
  adam_.state() = s.adam;
  rng_.set_state(s.rng_state);
}

}  // namespace omnishape::diffusion
