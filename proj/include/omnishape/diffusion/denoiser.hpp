#pragma once

#include <span>
#include <string>
#include <vector>

#include "omnishape/diffusion/schedule.hpp"
#include "omnishape/nn/tensor.hpp"

namespace omnishape::diffusion {

// Noise predictor eps(u_t, t, cond). Inputs are batched along the first axis: u_t is
// [B, state_shape...], t holds B continuous step times and cond is [B, cond_shape...].
// An empty cond tensor stands for the null token (all zeros).
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::string flavor() const = 0;
  virtual nn::Shape state_shape() const = 0;
  // Empty for unconditional models.
  virtual nn::Shape cond_shape() const = 0;
  virtual nn::Tensor epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor& cond) const = 0;
};

// [count, shape...]
nn::Shape batched(const nn::Shape& shape, std::size_t count);
std::size_t batch_size_of(const nn::Tensor& x, const nn::Shape& sample_shape, const char* what);
// Zeros of the conditioning shape, batch `count`.
nn::Tensor null_conditioning(const Denoiser& den, std::size_t count);
// Conditioning ready for a batch: empty -> null token, batch 1 -> repeated, batch count -> as is.
nn::Tensor expand_conditioning(const Denoiser& den, const nn::Tensor& cond, std::size_t count);

// eps_uncond + w (eps_cond - eps_uncond). w = 0 and w = 1 return the respective input
// unchanged.
nn::Tensor cfg_epsilon(const nn::Tensor& eps_cond, const nn::Tensor& eps_uncond, double w);

// Classifier-free guidance around a conditional model.
class GuidedDenoiser final : public Denoiser {
 public:
  GuidedDenoiser(const Denoiser& base, double weight);
  std::string flavor() const override { return base_.flavor(); }
  nn::Shape state_shape() const override { return base_.state_shape(); }
  nn::Shape cond_shape() const override { return base_.cond_shape(); }
  nn::Tensor epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor& cond) const override;

 private:
  const Denoiser& base_;
  double weight_;
};

// Isotropic Gaussian mixture over R^dim: sum_k w_k N(mean_k, sigma_k^2 I).
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<double> sigmas;

  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  void validate() const;
};

inline constexpr double kMinComponentVariance = 1e-12;

// Noised marginal at time t: components N(sqrt(abar) mean_k, (abar sigma_k^2 + 1 - abar) I).
// The exact noise predictor is eps* = -sqrt(1 - abar) grad log p_t(u), which works out to
//   eps* = sqrt(1 - abar) * sum_k r_k(u) (u - sqrt(abar) mean_k) / v_k
// with v_k the noised component variance (floored at kMinComponentVariance) and r_k the
// posterior responsibilities, evaluated in log space.
double mixture_log_density(std::span<const double> u, double t, const GaussianMixture& mix, const NoiseSchedule& sched);
std::vector<double> mixture_score(std::span<const double> u, double t, const GaussianMixture& mix, const NoiseSchedule& sched);
std::vector<double> analytic_mixture_epsilon(std::span<const double> u, double t, const GaussianMixture& mix,
                                             const NoiseSchedule& sched);

// The oracle as a denoiser over flat states of length dim. Ignores conditioning.
class MixtureOracle final : public Denoiser {
 public:
  MixtureOracle(GaussianMixture mix, const NoiseSchedule& sched);
  std::string flavor() const override { return "analytic-oracle"; }
  nn::Shape state_shape() const override { return {mix_.dim()}; }
  nn::Shape cond_shape() const override { return {}; }
  nn::Tensor epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor& cond) const override;
  const GaussianMixture& mixture() const { return mix_; }

 private:
  GaussianMixture mix_;
  const NoiseSchedule& sched_;
};

}  // namespace omnishape::diffusion
