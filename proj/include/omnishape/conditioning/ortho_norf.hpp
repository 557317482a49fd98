#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "omnishape/core/sim3.hpp"
#include "omnishape/geometry/render.hpp"
#include "omnishape/nn/tensor.hpp"

namespace omnishape::conditioning {

struct FilterConfig {
  double range = 0.55;  // coordinates beyond this are discarded, the rest clamped to 0.5
  std::size_t neighbours = 5;
  double outlier_factor = 3.0;
  std::size_t min_points = 8;
};

struct FilteredPoints {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<std::size_t> pixels;  // source pixel index of each kept point
  std::size_t dropped_range = 0;
  std::size_t dropped_outliers = 0;
};

// Keeps masked-on pixels inside the slack range, clamps them into the cube, renormalises
// normals, then drops points whose mean distance to their nearest neighbours exceeds
// outlier_factor times the median of that statistic. InsufficientEvidenceError when
// fewer than min_points survive.
FilteredPoints filter_points(const geometry::NorfMap& m, const FilterConfig& cfg = {});

// Cell of a unit-cube coordinate along one axis for a grid of `side` cells.
std::size_t voxel_cell(double coord, std::size_t side);

struct VoxelGrid {
  int lod = 0;
  std::size_t side = 0;  // 2^(lod+1)
  std::vector<std::uint8_t> occupancy;  // [x][y][z]
  std::vector<double> mean_normal;      // [x][y][z][3]

  explicit VoxelGrid(int lod = 0);
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * side + y) * side + z; }
  std::size_t occupied_count() const;
};

VoxelGrid voxelize(const std::vector<Vec3>& points, const std::vector<Vec3>& normals, int lod);

// Three planes XY (along z), XZ (along y), YZ (along x), each [side][side][4]:
// channel 0 any-occupied, channels 1-3 mean of the occupied cells' mean normals.
struct OrthoPlanes {
  std::size_t side = 0;
  std::array<std::vector<double>, 3> planes;

  explicit OrthoPlanes(std::size_t side = 0);
  double& at(int plane, std::size_t a, std::size_t b, int c) { return planes[plane][(a * side + b) * 4 + c]; }
  double at(int plane, std::size_t a, std::size_t b, int c) const { return planes[plane][(a * side + b) * 4 + c]; }
};

inline constexpr std::size_t kOrthoChannels = 48;

OrthoPlanes ortho_project(const VoxelGrid& grid);

// [side/f, side/f, 3*4*f*f]: channel = plane*4*f*f + c*f*f + (a % f)*f + (b % f).
nn::Tensor pixel_unshuffle(const OrthoPlanes& planes, std::size_t factor = 2);
OrthoPlanes pixel_shuffle(const nn::Tensor& ortho, std::size_t factor = 2);

// Whole chain for a NORF map at triplane level of detail `lod`: [2^lod, 2^lod, 48].
nn::Tensor ortho_norf(const geometry::NorfMap& m, int lod, const FilterConfig& cfg = {});

// "ONF1", u32 header length, JSON header {"shape": [R, R, 48]}, float32 values.
void save_ortho_norf(const std::filesystem::path& path, const nn::Tensor& ortho);
nn::Tensor load_ortho_norf(const std::filesystem::path& path);

}  // namespace omnishape::conditioning
