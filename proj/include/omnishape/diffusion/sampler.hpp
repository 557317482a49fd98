#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "omnishape/diffusion/denoiser.hpp"

namespace omnishape::diffusion {

// Sample i draws all of its randomness from Rng(derive_seed(seed, i)), so a hypothesis
// does not depend on how many others are generated alongside it.
struct SampleOptions {
  std::size_t count = 1;
  std::uint64_t seed = 0;
};

// Standard normal [count, shape...], row i from stream i.
nn::Tensor initial_noise(const nn::Shape& state_shape, const SampleOptions& opt);

// Ancestral sampling with reverse variance sigma_t^2 = beta_t. With steps < T the chain
// runs on evenly spaced steps and the betas are recomputed from the retained alpha_bars.
// DivergenceError (carrying the step) if the state turns non-finite.
nn::Tensor ddpm_sample(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, const SampleOptions& opt,
                       long steps = 0);

// Second-order multistep data-prediction solver for the probability-flow ODE, steps
// spaced uniformly in log-SNR from t = T to t = 1. Deterministic given the start state.
// Returns the state at t = 1.
nn::Tensor dpm_solver_pp_sample(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, long steps,
                                const SampleOptions& opt);
nn::Tensor dpm_solver_pp_from(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, long steps,
                              nn::Tensor x_T);

enum class Solver { Ddpm, DpmSolverPP };
std::string to_string(Solver s);
Solver solver_from_string(const std::string& s);

// One sampling request. cfg_weight 0 means no guidance (plain conditional model); any
// other value routes through classifier-free guidance with that weight.
struct SampleRun {
  std::uint64_t seed = 0;
  Solver solver = Solver::DpmSolverPP;
  long steps = 25;
  double cfg_weight = 0.0;
  std::string conditioning;  // path of the conditioning payload, informational

  void validate(const NoiseSchedule& sched) const;
};

nlohmann::json sample_run_to_json(const SampleRun& run);
SampleRun sample_run_from_json(const nlohmann::json& j);

nn::Tensor run_sampler(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, const SampleRun& run,
                       std::size_t count);

}  // namespace omnishape::diffusion
