#include "omnishape/triplane/field.hpp"

#include <algorithm>
#include <numeric>

#include "omnishape/core/error.hpp"
#include "omnishape/nn/ops.hpp"

namespace omnishape::triplane {

void FieldLibrary::validate() const {
  for (const auto& z : triplanes) {
    z.validate();
    if (decoder.input_width() != 3 * z.latent_dim)
      throw ValidationError("decoder input width does not match 3n of the triplanes");
  }
  if (decoder.output_width() != 1) throw ValidationError("decoder must output one value");
}

double decode_sdf(const nn::Mlp& decoder, const Triplane& z, const Vec3& point) {
  return decoder.forward(interpolate(z, point)).at(0);
}

namespace {

constexpr std::size_t kDecodeChunk = 1024;

void decode_chunk(const nn::Mlp& decoder, const Triplane& z, std::span<const Vec3> points, std::size_t start,
                  std::vector<double>& out) {
  const std::size_t width = 3 * z.latent_dim;
  const std::size_t count = std::min(kDecodeChunk, points.size() - start);
  nn::Tensor features({count, width});
  for (std::size_t i = 0; i < count; ++i) {
    const auto f = interpolate(z, points[start + i]);
    std::copy(f.begin(), f.end(), features.ptr() + i * width);
  }
  const nn::Tensor sdf = decoder.forward_batch(features);
  std::copy(sdf.vec().begin(), sdf.vec().end(), out.begin() + static_cast<std::ptrdiff_t>(start));
}

}  // namespace

std::vector<double> decode_sdf_batch(const nn::Mlp& decoder, const Triplane& z, std::span<const Vec3> points) {
  std::vector<double> out(points.size());
  const auto chunks = static_cast<long>((points.size() + kDecodeChunk - 1) / kDecodeChunk);
#pragma omp parallel for schedule(dynamic)
  for (long c = 0; c < chunks; ++c) decode_chunk(decoder, z, points, static_cast<std::size_t>(c) * kDecodeChunk, out);
  return out;
}

std::vector<double> decode_sdf_batch_serial(const nn::Mlp& decoder, const Triplane& z, std::span<const Vec3> points) {
  std::vector<double> out(points.size());
  for (std::size_t start = 0; start < points.size(); start += kDecodeChunk) decode_chunk(decoder, z, points, start, out);
  return out;
}

void FitConfig::validate() const {
  if (lod < 0 || lod > 12) throw UsageError("fit: lod out of range");
  if (latent_dim == 0) throw UsageError("fit: latent_dim must be positive");
  if (points_per_epoch == 0) throw UsageError("fit: points_per_epoch must be positive");
  if (alpha_tv < 0.0) throw UsageError("fit: alpha_tv must be nonnegative");
  train.validate();
}

nn::Var fit_objective(const nn::Var& planes, const nn::Mlp& decoder, std::span<const Vec3> points,
                      std::span<const std::size_t> object_index, std::span<const double> targets, double alpha_tv,
                      std::size_t points_per_epoch) {
  const std::size_t objects = planes.shape()[0];
  const nn::Var features = gather_features(planes, points, object_index);
  const nn::Var pred = decoder.forward(features);
  const nn::Var target = nn::constant(nn::Tensor({targets.size(), 1}, std::vector<double>(targets.begin(), targets.end())));
  nn::Var loss = nn::l1_mean(pred, target);
  if (alpha_tv > 0.0) {
    const double w = alpha_tv / static_cast<double>(objects * points_per_epoch);
    loss = nn::add(loss, nn::scale(total_variation(planes), w));
  }
  return loss;
}

FieldLibrary fit_triplanes(std::span<const SdfSampleSet> samples, const FitConfig& cfg) {
  if (samples.empty()) throw UsageError("fit_triplanes needs at least one sample set");
  cfg.validate();
  for (const auto& s : samples) {
    s.validate();
    if (s.size() == 0) throw UsageError("fit_triplanes: empty sample set");
  }

  Rng rng(cfg.train.seed);
  const std::size_t objects = samples.size();
  const std::size_t r = std::size_t{1} << cfg.lod, n = cfg.latent_dim;
  nn::Tensor init({objects, 3, r, r, n});
  for (double& v : init.vec()) v = rng.normal(0.0, cfg.init_std);
  nn::Var planes = nn::parameter(std::move(init));

  std::vector<std::size_t> widths{3 * n};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  nn::Mlp decoder(widths, rng);

  std::vector<nn::Var> params{planes};
  for (const auto& p : decoder.parameters()) params.push_back(p);
  nn::Adam adam(params, cfg.train);

  // Pool of (object, sample) pairs for the current epoch.
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  std::size_t cursor = 0;
  std::vector<std::vector<std::size_t>> order(objects);
  for (std::size_t o = 0; o < objects; ++o) {
    order[o].resize(samples[o].size());
    std::iota(order[o].begin(), order[o].end(), std::size_t{0});
  }
  auto refill = [&] {
    pool.clear();
    for (std::size_t o = 0; o < objects; ++o) {
      std::shuffle(order[o].begin(), order[o].end(), rng.engine());
      const std::size_t take = std::min(cfg.points_per_epoch, order[o].size());
      for (std::size_t k = 0; k < take; ++k) pool.emplace_back(o, order[o][k]);
    }
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    cursor = 0;
  };
  refill();

  FieldLibrary lib;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  std::vector<Vec3> pts;
  std::vector<std::size_t> idx;
  std::vector<double> tgt;
  for (long step = 1; step <= cfg.train.total_steps; ++step) {
    const std::size_t count = std::min(cfg.train.batch_size, pool.size() - cursor);
    pts.clear();
    idx.clear();
    tgt.clear();
    for (std::size_t k = 0; k < count; ++k) {
      const auto [o, j] = pool[cursor + k];
      pts.push_back(samples[o].points[j]);
      idx.push_back(o);
      tgt.push_back(samples[o].distances[j]);
    }
    cursor += count;
    const nn::Var loss = fit_objective(planes, decoder, pts, idx, tgt, cfg.alpha_tv, cfg.points_per_epoch);
    nn::backward(loss);
    adam.step();
    epoch_sum += loss.value()[0];
    ++epoch_steps;
    if (cursor >= pool.size() || step == cfg.train.total_steps) {
      lib.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
      epoch_sum = 0.0;
      epoch_steps = 0;
      if (step != cfg.train.total_steps) refill();
    }
  }
  lib.final_loss = lib.epoch_losses.empty() ? 0.0 : lib.epoch_losses.back();
  for (std::size_t o = 0; o < objects; ++o) lib.triplanes.push_back(unstack_plane(planes.value(), o));
  lib.decoder = std::move(decoder);
  return lib;
}

}  // namespace omnishape::triplane
