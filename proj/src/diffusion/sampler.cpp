#include "omnishape/diffusion/sampler.hpp"

#include <cmath>
#include <vector>

#include "omnishape/core/error.hpp"
#include "omnishape/core/rng.hpp"

namespace omnishape::diffusion {
namespace {

std::vector<Rng> sample_streams(const SampleOptions& opt) {
  std::vector<Rng> rngs;
  rngs.reserve(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) rngs.emplace_back(derive_seed(opt.seed, i));
  return rngs;
}

nn::Tensor draw_noise(const nn::Shape& state_shape, std::vector<Rng>& rngs) {
  nn::Tensor x(batched(state_shape, rngs.size()));
  const std::size_t n = nn::shape_size(state_shape);
  for (std::size_t b = 0; b < rngs.size(); ++b)
    for (std::size_t k = 0; k < n; ++k) x[b * n + k] = rngs[b].normal();
  return x;
}

void check_finite(const nn::Tensor& x, long step) {
  if (!x.all_finite()) throw DivergenceError("sampler state became non-finite", step);
}

}  // namespace

nn::Tensor initial_noise(const nn::Shape& state_shape, const SampleOptions& opt) {
  auto rngs = sample_streams(opt);
  return draw_noise(state_shape, rngs);
}

nn::Tensor ddpm_sample(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, const SampleOptions& opt,
                       long steps) {
  const long T = sched.steps();
  if (steps == 0) steps = T;
  if (steps < 1 || steps > T) throw UsageError("ddpm steps must lie in [1, T]");
  if (opt.count == 0) throw UsageError("sample count must be positive");

  std::vector<long> tau(static_cast<std::size_t>(steps) + 1, 0);
  for (long i = 1; i <= steps; ++i) tau[static_cast<std::size_t>(i)] = i * T / steps;

  auto rngs = sample_streams(opt);
  nn::Tensor x = draw_noise(den.state_shape(), rngs);
  const nn::Tensor c = expand_conditioning(den, cond, opt.count);
  const std::size_t n = nn::shape_size(den.state_shape());
  std::vector<double> times(opt.count);

  for (long i = steps; i >= 1; --i) {
    const long t = tau[static_cast<std::size_t>(i)];
    const double ab = sched.alpha_bar(t);
    const double ab_prev = i > 1 ? sched.alpha_bar(tau[static_cast<std::size_t>(i - 1)]) : 1.0;
    const double beta = 1.0 - ab / ab_prev;
    std::fill(times.begin(), times.end(), static_cast<double>(t));
    const nn::Tensor eps = den.epsilon(x, times, c);
    const double k_eps = beta / std::sqrt(1.0 - ab);
    const double k_x = 1.0 / std::sqrt(1.0 - beta);
    const double sigma = std::sqrt(beta);
    for (std::size_t b = 0; b < opt.count; ++b)
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = b * n + k;
        x[j] = k_x * (x[j] - k_eps * eps[j]);
        if (i > 1) x[j] += sigma * rngs[b].normal();
      }
    check_finite(x, t);
  }
  return x;
}

nn::Tensor dpm_solver_pp_from(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, long steps,
                              nn::Tensor x) {
  if (steps < 2) throw UsageError("DPM-Solver++ needs at least 2 steps");
  const std::size_t count = batch_size_of(x, den.state_shape(), "start state");
  const nn::Tensor c = expand_conditioning(den, cond, count);
  const double T = static_cast<double>(sched.steps());
  const double lam_start = sched.log_snr(T), lam_end = sched.log_snr(1.0);

  std::vector<double> ts(static_cast<std::size_t>(steps) + 1);
  for (long i = 0; i <= steps; ++i)
    ts[static_cast<std::size_t>(i)] =
        sched.time_for_log_snr(lam_start + (lam_end - lam_start) * static_cast<double>(i) / static_cast<double>(steps));
  ts.front() = T;
  ts.back() = 1.0;

  std::vector<double> times(count);
  auto data_prediction = [&](const nn::Tensor& state, double t) {
    std::fill(times.begin(), times.end(), t);
    const nn::Tensor eps = den.epsilon(state, times, c);
    const double ab = sched.alpha_bar_at(t);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    nn::Tensor x0(state.shape());
    for (std::size_t j = 0; j < x0.size(); ++j) x0[j] = (state[j] - s * eps[j]) / a;
    return x0;
  };

  nn::Tensor prev = data_prediction(x, ts[0]);
  nn::Tensor older;
  double h_prev = 0.0;
  for (long i = 1; i <= steps; ++i) {
    const double t0 = ts[static_cast<std::size_t>(i - 1)], t1 = ts[static_cast<std::size_t>(i)];
    const double ab0 = sched.alpha_bar_at(t0), ab1 = sched.alpha_bar_at(t1);
    const double s0 = std::sqrt(1.0 - ab0), s1 = std::sqrt(1.0 - ab1), a1 = std::sqrt(ab1);
    const double h = sched.log_snr(t1) - sched.log_snr(t0);
    const double phi = std::expm1(-h);  // e^{-h} - 1
    // First order on the opening step and, for short runs, on the closing one.
    const bool first_order = i == 1 || (i == steps && steps < 10);
    for (std::size_t j = 0; j < x.size(); ++j) {
      double d = prev[j];
      if (!first_order) {
        const double r = h_prev / h;
        d = (1.0 + 0.5 / r) * prev[j] - (0.5 / r) * older[j];
      }
      x[j] = (s1 / s0) * x[j] - a1 * phi * d;
    }
    check_finite(x, static_cast<long>(std::lround(t1)));
    if (i < steps) {
      older = std::move(prev);
      prev = data_prediction(x, t1);
      h_prev = h;
    }
  }
  return x;
}

nn::Tensor dpm_solver_pp_sample(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, long steps,
                                const SampleOptions& opt) {
  if (opt.count == 0) throw UsageError("sample count must be positive");
  return dpm_solver_pp_from(den, cond, sched, steps, initial_noise(den.state_shape(), opt));
}

std::string to_string(Solver s) { return s == Solver::Ddpm ? "ddpm" : "dpm-solver++"; }

Solver solver_from_string(const std::string& s) {
  if (s == "ddpm") return Solver::Ddpm;
  if (s == "dpm-solver++") return Solver::DpmSolverPP;
  throw ValidationError("unknown solver '" + s + "'");
}

void SampleRun::validate(const NoiseSchedule& sched) const {
  if (!(cfg_weight >= 0.0)) throw ValidationError("cfg_weight must be nonnegative");
  if (solver == Solver::Ddpm && (steps < 1 || steps > sched.steps())) throw ValidationError("ddpm steps must lie in [1, T]");
  if (solver == Solver::DpmSolverPP && (steps < 2 || steps > sched.steps()))
    throw ValidationError("DPM-Solver++ steps must lie in [2, T]");
}

nlohmann::json sample_run_to_json(const SampleRun& run) {
  return {{"seed", run.seed},
          {"solver", to_string(run.solver)},
          {"steps", run.steps},
          {"cfg_weight", run.cfg_weight},
          {"conditioning", run.conditioning}};
}

SampleRun sample_run_from_json(const nlohmann::json& j) {
  try {
    SampleRun r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.solver = solver_from_string(j.at("solver").get<std::string>());
    r.steps = j.at("steps").get<long>();
    r.cfg_weight = j.at("cfg_weight").get<double>();
    r.conditioning = j.value("conditioning", std::string{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad sample run manifest: ") + e.what());
  }
}

nn::Tensor run_sampler(const Denoiser& den, const nn::Tensor& cond, const NoiseSchedule& sched, const SampleRun& run,
                       std::size_t count) {
  run.validate(sched);
  const SampleOptions opt{count, run.seed};
  if (run.cfg_weight == 0.0) {
    return run.solver == Solver::Ddpm ? ddpm_sample(den, cond, sched, opt, run.steps)
                                      : dpm_solver_pp_sample(den, cond, sched, run.steps, opt);
  }
  const GuidedDenoiser guided(den, run.cfg_weight);
  return run.solver == Solver::Ddpm ? ddpm_sample(guided, cond, sched, opt, run.steps)
                                    : dpm_solver_pp_sample(guided, cond, sched, run.steps, opt);
}

}  // namespace omnishape::diffusion
