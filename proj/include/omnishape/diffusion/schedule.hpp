#pragma once

#include <vector>

#include "omnishape/nn/tensor.hpp"

namespace omnishape::diffusion {

// Discrete variance-preserving noise schedule. Steps are 1-based: beta(1) is the first
// noising step and alpha_bar(t) = prod_{s<=t} (1 - beta(s)).
//
// Samplers that need times between integer steps use alpha_bar_at(), which interpolates
// log alpha_bar linearly between neighbouring steps with alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);
  static NoiseSchedule linear(long steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  long steps() const { return static_cast<long>(betas_.size()); }
  double beta(long t) const;
  double alpha(long t) const { return 1.0 - beta(t); }
  double alpha_bar(long t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  // Continuous time in [0, T].
  double alpha_bar_at(double t) const;
  // Half log signal-to-noise ratio: log(sqrt(abar) / sqrt(1 - abar)). Decreasing in t.
  double log_snr(double t) const;
  // Inverse of log_snr on [t_lo, T] by bisection.
  double time_for_log_snr(double lambda, double t_lo = 1.0) const;

  // ValidationError unless betas lie in (0, 1) and strictly increase.
  void validate() const;

 private:
  void check_step(long t) const;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> log_alpha_bars_;  // index 0 is t = 0
};

// u_t = sqrt(abar_t) u0 + sqrt(1 - abar_t) eps.
nn::Tensor forward_sample(const nn::Tensor& u0, long t, const nn::Tensor& eps, const NoiseSchedule& sched);

}  // namespace omnishape::diffusion
