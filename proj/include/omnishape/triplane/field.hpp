#pragma once

#include <span>
#include <vector>

#include "omnishape/nn/adam.hpp"
#include "omnishape/nn/mlp.hpp"
#include "omnishape/triplane/sdf_samples.hpp"
#include "omnishape/triplane/triplane.hpp"

namespace omnishape::triplane {

// Per-object triplanes sharing one decoder.
struct FieldLibrary {
  std::vector<Triplane> triplanes;
  nn::Mlp decoder;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;

  // Throws ValidationError if the decoder input width is not 3n for every triplane.
  void validate() const;
};

double decode_sdf(const nn::Mlp& decoder, const Triplane& z, const Vec3& point);
inline double decode_sdf(const FieldLibrary& lib, const Triplane& z, const Vec3& point) {
  return decode_sdf(lib.decoder, z, point);
}
// Batched decode without graph recording.
// Chunks are decoded on OpenMP threads; the serial form gives identical values.
std::vector<double> decode_sdf_batch(const nn::Mlp& decoder, const Triplane& z, std::span<const Vec3> points);
std::vector<double> decode_sdf_batch_serial(const nn::Mlp& decoder, const Triplane& z, std::span<const Vec3> points);

struct FitConfig {
  int lod = 3;
  std::size_t latent_dim = 4;
  std::vector<std::size_t> hidden{64, 64};
  double alpha_tv = 0.01;
  // Supervision points drawn per object per epoch (fewer if the object has fewer).
  std::size_t points_per_epoch = 5000;
  double init_std = 0.01;
  nn::TrainConfig train{.peak_lr = 5e-3, .warmup_steps = 50, .total_steps = 2000, .batch_size = 1024, .seed = 0};

  void validate() const;
};

// Objective for one step over a minibatch drawn from `objects` objects:
//   mean |decoded - target| + alpha_tv / (objects * points_per_epoch) * sum of TV,
// i.e. the summed L1 + TV objective for one epoch, divided by the epoch's point count.
nn::Var fit_objective(const nn::Var& planes, const nn::Mlp& decoder, std::span<const Vec3> points,
                      std::span<const std::size_t> object_index, std::span<const double> targets, double alpha_tv,
                      std::size_t points_per_epoch);

// Jointly fits one triplane per sample set and a shared decoder. Each epoch draws a fresh
// random subset per object, shuffles the union and walks it in minibatches until
// train.total_steps updates have been made. UsageError if `samples` is empty.
FieldLibrary fit_triplanes(std::span<const SdfSampleSet> samples, const FitConfig& cfg);

}  // namespace omnishape::triplane
