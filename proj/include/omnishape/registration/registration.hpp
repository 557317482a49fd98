#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "omnishape/core/rng.hpp"
#include "omnishape/core/sim3.hpp"
#include "omnishape/geometry/camera.hpp"

namespace omnishape::registration {

// Paired points: norf[i] (unit cube) observed at scene[i] (metric, world frame).
struct Correspondences {
  std::vector<Vec3> norf;
  std::vector<Vec3> scene;

  std::size_t size() const { return norf.size(); }
  // ValidationError unless the lists have equal length.
  void validate() const;
};

// Least-squares similarity minimising sum |s R src_i + t - dst_i|^2, reflections
// excluded. Pairs are summed in sorted order so the result does not depend on how the
// correspondences are labelled. RankError for fewer than 3 pairs or a configuration
// whose cross-covariance has rank below 2 (collinear or coincident points).
Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst);

double residual(const Sim3& T, const Vec3& src, const Vec3& dst);

struct RansacConfig {
  double threshold = 0.01;  // metres
  std::size_t iterations = 512;
  std::uint64_t seed = 0;
  std::size_t max_refits = 10;
};

struct RegistrationResult {
  Sim3 transform;
  std::size_t inlier_count = 0;
  double mean_residual = 0.0;  // over inliers
  double threshold = 0.0;
};

// Iteration i draws its minimal sample from Rng(derive_seed(seed, i)). The best model by
// inlier count (ties: lower mean inlier residual, then lower iteration) is refit on its
// inliers while that improves the same ordering. RegistrationFailedError if no model
// reaches 3 inliers.
RegistrationResult ransac_register(const Correspondences& corr, const RansacConfig& cfg);
// Iterations spread over OpenMP threads; identical result to the serial form.
RegistrationResult ransac_register_serial(const Correspondences& corr, const RansacConfig& cfg);
RegistrationResult ransac_register(const Correspondences& corr, double threshold, std::size_t iterations, Rng& rng);

// 2% of the diagonal of the scene points' bounding box.
inline constexpr double kThresholdFraction = 0.02;
double default_threshold(std::span<const Vec3> scene);

struct HypothesisScore {
  std::size_t inlier_count = 0;
  double mean_residual = 0.0;
};
// Most inliers; ties by lower mean residual, then lower index. UsageError when empty.
std::size_t select_hypothesis(std::span<const HypothesisScore> scores);

struct BackProjection {
  std::vector<Vec3> points;           // camera frame
  std::vector<std::size_t> pixels;    // v * size + u
  std::size_t skipped = 0;            // masked pixels with nonpositive or non-finite depth
};
// Pinhole inverse projection of every masked pixel.
BackProjection back_project(std::span<const double> depth, std::span<const std::uint8_t> mask, const geometry::Camera& cam);

// Pairs NORF points with the world-frame back-projection of the same pixel. Pixels
// without a valid depth are left out.
Correspondences pair_by_pixel(std::span<const Vec3> norf_points, std::span<const std::size_t> norf_pixels,
                              std::span<const double> depth, std::span<const std::uint8_t> depth_mask,
                              const geometry::Camera& cam);

nlohmann::json registration_to_json(const RegistrationResult& r);
RegistrationResult registration_from_json(const nlohmann::json& j);

}  // namespace omnishape::registration
