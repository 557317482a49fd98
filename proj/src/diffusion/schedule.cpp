#include "omnishape/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "omnishape/core/error.hpp"

namespace omnishape::diffusion {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw UsageError("a noise schedule needs at least one step");
  alpha_bars_.resize(betas_.size());
  log_alpha_bars_.assign(betas_.size() + 1, 0.0);
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
    log_alpha_bars_[i + 1] = std::log(prod);
  }
}

NoiseSchedule NoiseSchedule::linear(long steps, double beta_start, double beta_end) {
  if (steps < 1) throw UsageError("schedule length must be positive");
  std::vector<double> b(static_cast<std::size_t>(steps));
  for (long i = 0; i < steps; ++i)
    b[static_cast<std::size_t>(i)] =
        steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  NoiseSchedule s(std::move(b));
  s.validate();
  return s;
}

void NoiseSchedule::check_step(long t) const {
  if (t < 1 || t > steps())
    throw DomainError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
}

double NoiseSchedule::beta(long t) const {
  check_step(t);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(long t) const {
  check_step(t);
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(double t) const {
  const double T = static_cast<double>(steps());
  if (!(t >= 0.0 && t <= T)) throw DomainError("continuous time " + std::to_string(t) + " outside [0, T]");
  if (t == std::floor(t)) return t == 0.0 ? 1.0 : alpha_bars_[static_cast<std::size_t>(t) - 1];
  const auto k = static_cast<std::size_t>(std::floor(t));
  const double f = t - static_cast<double>(k);
  return std::exp((1.0 - f) * log_alpha_bars_[k] + f * log_alpha_bars_[k + 1]);
}

double NoiseSchedule::log_snr(double t) const {
  const double ab = alpha_bar_at(t);
  return 0.5 * (std::log(ab) - std::log1p(-ab));
}

double NoiseSchedule::time_for_log_snr(double lambda, double t_lo) const {
  double lo = t_lo, hi = static_cast<double>(steps());
  if (lambda >= log_snr(lo)) return lo;
  if (lambda <= log_snr(hi)) return hi;
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (log_snr(mid) > lambda ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void NoiseSchedule::validate() const {
  if (betas_.empty()) throw ValidationError("empty noise schedule");
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0)) throw ValidationError("beta outside (0, 1) at step " + std::to_string(i + 1));
    if (i > 0 && !(betas_[i] > betas_[i - 1])) throw ValidationError("betas must strictly increase");
  }
}

nn::Tensor forward_sample(const nn::Tensor& u0, long t, const nn::Tensor& eps, const NoiseSchedule& sched) {
  if (u0.shape() != eps.shape())
    throw ShapeError("noise " + nn::shape_string(eps.shape()) + " does not match state " + nn::shape_string(u0.shape()));
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
  nn::Tensor out(u0.shape());
  for (std::size_t i = 0; i < u0.size(); ++i) out[i] = a * u0[i] + s * eps[i];
  return out;
}

}  // namespace omnishape::diffusion
