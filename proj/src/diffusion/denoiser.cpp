#include "omnishape/diffusion/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "omnishape/core/error.hpp"

namespace omnishape::diffusion {

nn::Shape batched(const nn::Shape& shape, std::size_t count) {
  nn::Shape s{count};
  s.insert(s.end(), shape.begin(), shape.end());
  return s;
}

std::size_t batch_size_of(const nn::Tensor& x, const nn::Shape& sample_shape, const char* what) {
  const auto& s = x.shape();
  if (s.size() != sample_shape.size() + 1 || !std::equal(sample_shape.begin(), sample_shape.end(), s.begin() + 1))
    throw ShapeError(std::string(what) + " has shape " + nn::shape_string(s) + ", expected [B, " +
                     nn::shape_string(sample_shape) + "]");
  return s[0];
}

nn::Tensor null_conditioning(const Denoiser& den, std::size_t count) {
  const auto cs = den.cond_shape();
  if (cs.empty()) return {};
  return nn::Tensor(batched(cs, count), 0.0);
}

nn::Tensor expand_conditioning(const Denoiser& den, const nn::Tensor& cond, std::size_t count) {
  const auto cs = den.cond_shape();
  if (cs.empty() || cond.empty()) return null_conditioning(den, count);
  const std::size_t b = batch_size_of(cond, cs, "conditioning");
  if (b == count) return cond;
  if (b != 1) throw ShapeError("conditioning batch " + std::to_string(b) + " for " + std::to_string(count) + " samples");
  nn::Tensor out(batched(cs, count));
  const std::size_t n = cond.size();
  for (std::size_t i = 0; i < count; ++i) std::copy_n(cond.ptr(), n, out.ptr() + i * n);
  return out;
}

nn::Tensor cfg_epsilon(const nn::Tensor& eps_cond, const nn::Tensor& eps_uncond, double w) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw ShapeError("guidance inputs " + nn::shape_string(eps_cond.shape()) + " vs " + nn::shape_string(eps_uncond.shape()));
  if (w == 0.0) return eps_uncond;
  if (w == 1.0) return eps_cond;
  nn::Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_uncond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

GuidedDenoiser::GuidedDenoiser(const Denoiser& base, double weight) : base_(base), weight_(weight) {
  if (!(weight >= 0.0)) throw UsageError("guidance weight must be nonnegative");
}

nn::Tensor GuidedDenoiser::epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor& cond) const {
  const std::size_t b = batch_size_of(u_t, state_shape(), "state");
  if (weight_ == 1.0) return base_.epsilon(u_t, t, cond);
  const nn::Tensor null = null_conditioning(base_, b);
  if (weight_ == 0.0) return base_.epsilon(u_t, t, null);
  return cfg_epsilon(base_.epsilon(u_t, t, cond), base_.epsilon(u_t, t, null), weight_);
}

void GaussianMixture::validate() const {
  const std::size_t k = weights.size();
  if (k == 0 || means.size() != k || sigmas.size() != k) throw UsageError("mixture parameter lists disagree");
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!(weights[i] > 0.0)) throw UsageError("mixture weights must be positive");
    if (means[i].size() != dim() || dim() == 0) throw UsageError("mixture means must share one nonzero dimension");
    if (!(sigmas[i] >= 0.0)) throw UsageError("mixture sigmas must be nonnegative");
    total += weights[i];
  }
  if (std::fabs(total - 1.0) > 1e-9) throw UsageError("mixture weights must sum to 1");
}

namespace {

struct Posterior {
  std::vector<double> resp;      // responsibilities
  std::vector<double> variance;  // noised per-component variance
  double log_density = 0.0;
  double root_abar = 0.0;
};

Posterior posterior(std::span<const double> u, double t, const GaussianMixture& mix, const NoiseSchedule& sched) {
  if (u.size() != mix.dim()) throw ShapeError("state length does not match the mixture dimension");
  const double ab = sched.alpha_bar_at(t);
  Posterior p;
  p.root_abar = std::sqrt(ab);
  const std::size_t k = mix.weights.size();
  const double d = static_cast<double>(u.size());
  std::vector<double> logp(k);
  double top = -std::numeric_limits<double>::infinity();
  p.variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double v = std::max(ab * mix.sigmas[c] * mix.sigmas[c] + (1.0 - ab), kMinComponentVariance);
    p.variance[c] = v;
    double sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double r = u[i] - p.root_abar * mix.means[c][i];
      sq += r * r;
    }
    logp[c] = std::log(mix.weights[c]) - 0.5 * d * std::log(2.0 * std::numbers::pi * v) - 0.5 * sq / v;
    top = std::max(top, logp[c]);
  }
  double z = 0.0;
  for (double l : logp) z += std::exp(l - top);
  p.log_density = top + std::log(z);
  p.resp.resize(k);
  for (std::size_t c = 0; c < k; ++c) p.resp[c] = std::exp(logp[c] - p.log_density);
  return p;
}

}  // namespace

double mixture_log_density(std::span<const double> u, double t, const GaussianMixture& mix, const NoiseSchedule& sched) {
  return posterior(u, t, mix, sched).log_density;
}

std::vector<double> mixture_score(std::span<const double> u, double t, const GaussianMixture& mix, const NoiseSchedule& sched) {
  const Posterior p = posterior(u, t, mix, sched);
  std::vector<double> g(u.size(), 0.0);
  for (std::size_t c = 0; c < p.resp.size(); ++c)
    for (std::size_t i = 0; i < u.size(); ++i) g[i] -= p.resp[c] * (u[i] - p.root_abar * mix.means[c][i]) / p.variance[c];
  return g;
}

std::vector<double> analytic_mixture_epsilon(std::span<const double> u, double t, const GaussianMixture& mix,
                                             const NoiseSchedule& sched) {
  std::vector<double> e = mixture_score(u, t, mix, sched);
  const double s = std::sqrt(1.0 - sched.alpha_bar_at(t));
  for (double& v : e) v *= -s;
  return e;
}

MixtureOracle::MixtureOracle(GaussianMixture mix, const NoiseSchedule& sched) : mix_(std::move(mix)), sched_(sched) {
  mix_.validate();
}

nn::Tensor MixtureOracle::epsilon(const nn::Tensor& u_t, std::span<const double> t, const nn::Tensor&) const {
  const std::size_t b = batch_size_of(u_t, state_shape(), "state");
  if (t.size() != b) throw ShapeError("one time per batch element expected");
  const std::size_t d = mix_.dim();
  nn::Tensor out(u_t.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const auto e = analytic_mixture_epsilon(std::span<const double>(u_t.ptr() + i * d, d), t[i], mix_, sched_);
    std::copy(e.begin(), e.end(), out.ptr() + i * d);
  }
  return out;
}

}  // namespace omnishape::diffusion
