#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnishape/core/rng.hpp"
#include "omnishape/core/sim3.hpp"
#include "omnishape/geometry/mesh.hpp"

namespace omnishape::metrics {

// Exact nearest-neighbour distances to a fixed cloud through a uniform grid. Distances are
// the same expression brute force evaluates, so the minima agree bit for bit.
class NearestNeighbors {
 public:
  explicit NearestNeighbors(std::span<const Vec3> cloud);
  double distance(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;  // sorted by cell
  std::vector<std::size_t> cell_start_;
  Vec3 lo_;
  double cell_ = 1.0;
  long dims_[3] = {1, 1, 1};
  long cell_index(long x, long y, long z) const { return (x * dims_[1] + y) * dims_[2] + z; }
};

// For every point of A, the distance to its nearest point of B. The grid version runs over
// OpenMP threads; the serial one is the O(|A||B|) scan.
std::vector<double> nearest_distances(std::span<const Vec3> a, std::span<const Vec3> b);
std::vector<double> nearest_distances_serial(std::span<const Vec3> a, std::span<const Vec3> b);

// Mean un-squared Euclidean nearest-neighbour distance, averaged over both directions.
// UsageError on an empty set.
double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b);
// Harmonic mean of precision (share of A within tau of B) and recall (share of B within
// tau of A); "within" is <= tau. Zero when both are zero.
double fscore(std::span<const Vec3> a, std::span<const Vec3> b, double tau);

struct BestOf {
  double value = 0.0;
  std::size_t index = 0;  // first minimiser
};
BestOf best_of_n(std::span<const double> values);
using CloudMetric = std::function<double(std::span<const Vec3>, std::span<const Vec3>)>;
BestOf best_of_n(const std::vector<std::vector<Vec3>>& hypotheses, std::span<const Vec3> gt, const CloudMetric& metric);

// The 24 proper rotations mapping the cube onto itself, identity first.
std::vector<Mat3> cube_rotations();

struct EvalProtocol {
  std::size_t n_points = 10000;
  double f_threshold = 0.02;  // unit-cube units
  std::vector<Mat3> rotation_set = cube_rotations();

  void validate() const;  // ValidationError
};
nlohmann::json protocol_to_json(const EvalProtocol& p);
EvalProtocol protocol_from_json(const nlohmann::json& j);

struct AlignedChamfer {
  double value = 0.0;
  std::size_t rotation = 0;
};
// min over R in the set of chamfer_l1(R a, b), rotating about the origin.
AlignedChamfer aligned_chamfer_detail(std::span<const Vec3> a, std::span<const Vec3> b, const EvalProtocol& protocol);
inline double aligned_chamfer(std::span<const Vec3> a, std::span<const Vec3> b, const EvalProtocol& protocol) {
  return aligned_chamfer_detail(a, b, protocol).value;
}

// Area-weighted uniform samples on the mesh. UsageError for a mesh with no area.
std::vector<Vec3> sample_mesh_surface(const geometry::TriangleMesh& mesh, std::size_t count, Rng& rng);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for one value
};
MeanStd mean_std(std::span<const double> values);

// Best-of-first-N curves for one object. oracle[k] = min of the first k+1 Chamfer values;
// inlier[k] = Chamfer of the hypothesis among the first k+1 with the most registration
// inliers (ties: lower mean residual, then earlier).
struct HypothesisEval {
  double chamfer = 0.0;
  double fscore = 0.0;
  bool registered = false;
  std::size_t inlier_count = 0;
  double mean_residual = 0.0;
  // Rotation-aligned Chamfer in the NORF frame when a shape was produced; reported only.
  std::optional<double> norf_chamfer;
};
struct ObjectEval {
  std::string scene;
  std::string object;
  std::vector<HypothesisEval> hypotheses;
};
std::vector<double> oracle_curve(std::span<const HypothesisEval> h);
std::vector<double> inlier_curve(std::span<const HypothesisEval> h);

// Per-object rows, per-scene means of the curves, and mean/std of the per-scene means.
// Objects must all carry the same hypothesis count.
nlohmann::json eval_report(std::span<const ObjectEval> objects, const EvalProtocol& protocol);

}  // namespace omnishape::metrics
