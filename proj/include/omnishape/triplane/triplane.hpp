#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "omnishape/core/sim3.hpp"
#include "omnishape/nn/autograd.hpp"
#include "omnishape/nn/tensor.hpp"

namespace omnishape::triplane {

enum class PlaneAxis : int { XY = 0, XZ = 1, YZ = 2 };

// Three axis-aligned feature planes of 2^lod x 2^lod cells with latent_dim channels.
// Plane XY is indexed [x][y], XZ [x][z], YZ [y][z]; cell (i, j) sits at the centre
// ((i + 0.5) / 2^lod - 0.5, (j + 0.5) / 2^lod - 0.5) of the unit square.
struct Triplane {
  int lod = 0;
  std::size_t latent_dim = 0;
  std::array<std::vector<double>, 3> planes;

  Triplane() = default;
  Triplane(int lod, std::size_t latent_dim, double fill = 0.0);

  std::size_t resolution() const { return std::size_t{1} << lod; }
  std::size_t plane_size() const { return resolution() * resolution() * latent_dim; }
  double& at(PlaneAxis k, std::size_t i, std::size_t j, std::size_t c) {
    return planes[static_cast<int>(k)][(i * resolution() + j) * latent_dim + c];
  }
  double at(PlaneAxis k, std::size_t i, std::size_t j, std::size_t c) const {
    return planes[static_cast<int>(k)][(i * resolution() + j) * latent_dim + c];
  }
  void validate() const;
};

// Coordinates of `point` inside plane k, in (first, second) axis order.
std::array<double, 2> project_to_plane(PlaneAxis k, const Vec3& point);

// Continuous cell coordinate of a unit-interval coordinate: clamped to [0, R-1].
double grid_coordinate(double coord, std::size_t resolution);

// Concatenated (XY, XZ, YZ) bilinear features, length 3n. DomainError outside the cube.
std::vector<double> interpolate(const Triplane& z, const Vec3& point);

// Anisotropic total variation: sum of |forward differences| along both plane axes over
// every channel of every plane.
double total_variation(const Triplane& z);

// Image layout [R, R, 3n] (height, width, channel), channel = plane * n + c.
nn::Tensor to_image_layout(const Triplane& z);
Triplane from_image_layout(const nn::Tensor& image, std::size_t latent_dim);

// Per-image-channel scale normalisation towards a target standard deviation.
inline constexpr double kTargetStd = 0.2;
inline constexpr double kMinRefStd = 1e-8;

// Population standard deviation of each of the 3n image channels over a library.
std::vector<double> channel_std(std::span<const Triplane> library);
// Scales channel c by kTargetStd / ref_std[c] (channels with ref_std < kMinRefStd stay
// unscaled) and clips to [-1, 1].
Triplane normalize_triplane(const Triplane& z, std::span<const double> ref_std);
// Undoes the scaling only; clipped values are not recovered.
Triplane denormalize_triplane(const Triplane& z, std::span<const double> ref_std);

// "TPL1": u32 lod, u32 latent_dim, float32 ref_std[3n], then planes XY, XZ, YZ as
// float32 row-major [R][R][n].
void save_triplane(const std::filesystem::path& path, const Triplane& z, std::span<const double> ref_std);
struct LoadedTriplane {
  Triplane triplane;
  std::vector<double> ref_std;
};
LoadedTriplane load_triplane(const std::filesystem::path& path);

// --- differentiable forms used by fitting. `planes` is [objects, 3, R, R, n].

// Bilinear features for points[b] of object object_index[b]; output [B, 3n].
nn::Var gather_features(const nn::Var& planes, std::span<const Vec3> points, std::span<const std::size_t> object_index);
// Total variation summed over all objects.
nn::Var total_variation(const nn::Var& planes);

nn::Tensor stack_planes(std::span<const Triplane> library);
Triplane unstack_plane(const nn::Tensor& planes, std::size_t object);

}  // namespace omnishape::triplane
