#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "omnishape/core/rng.hpp"
#include "omnishape/geometry/camera.hpp"
#include "omnishape/geometry/shape.hpp"

namespace omnishape::geometry {

inline constexpr double kNorfSentinel = -1.0;

// Per-pixel NORF coordinates and NORF-frame normals of the visible surface. Arrays are
// row-major [v][u][channel]. Background pixels hold kNorfSentinel in coords, zero normals
// and zero depth.
struct NorfMap {
  int size = 0;
  std::vector<double> coords;
  std::vector<double> normals;
  std::vector<std::uint8_t> mask;
  std::vector<double> depth;  // camera z of the hit, metric units
  Camera camera;

  explicit NorfMap(int d = 0);
  std::size_t pixel(int u, int v) const { return static_cast<std::size_t>(v) * size + u; }
  std::size_t hit_count() const;
  bool empty() const { return hit_count() == 0; }
  // Throws ValidationError if the invariants on coords, normals and background fail.
  void validate() const;
};

// Shaded intensity (one channel) and camera-frame normals; background is 0.
struct Observation {
  int size = 0;
  std::vector<double> image;
  std::vector<double> normals;
  std::vector<std::uint8_t> mask;

  explicit Observation(int d = 0);
  void validate() const;
};

NorfMap render_norf(const Shape& shape, const Camera& cam);
NorfMap render_norf_serial(const Shape& shape, const Camera& cam);

inline constexpr double kAmbient = 0.1;
// I = clamp(0.1 + 0.9 * max(0, n . l), 0, 1); `light_dir` points from the surface towards
// the light, world frame.
Observation render_observation(const Shape& shape, const Camera& cam, const Vec3& light_dir);
double shade(const Vec3& normal, const Vec3& light_dir);

// Training-time perturbations applied jointly to an observation and its target map.
struct AugmentConfig {
  double downscale_prob = 0.25;
  double rotate_prob = 0.5;
  double max_rotation = 0.35;  // radians, in-plane about the image centre
};
// Downscale-upscale touches the observation only; rotation resamples both (nearest
// neighbour) and turns the camera-frame normals with the image.
void augment_pair(Observation& obs, NorfMap& norf, const AugmentConfig& cfg, Rng& rng);
Observation downscale_upscale(const Observation& obs);
// Rotation by `angle` about the image centre, nearest-neighbour.
Observation rotate_observation(const Observation& obs, double angle);
NorfMap rotate_norf(const NorfMap& norf, double angle);

// JSON sidecar `<base>.json` ({d, channels, sentinel, camera}) plus raw little-endian
// float32 planes in `<base>.bin`, one full d x d plane per channel in channel order.
void save_norf_map(const std::filesystem::path& base, const NorfMap& m);
NorfMap load_norf_map(const std::filesystem::path& base);
void save_observation(const std::filesystem::path& base, const Observation& o);
Observation load_observation(const std::filesystem::path& base);

}  // namespace omnishape::geometry
