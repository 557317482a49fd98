#include "omnishape/metrics/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

#include "omnishape/core/error.hpp"
#include "omnishape/registration/registration.hpp"

namespace omnishape::metrics {

NearestNeighbors::NearestNeighbors(std::span<const Vec3> cloud) {
  if (cloud.empty()) throw UsageError("nearest neighbours of an empty cloud");
  Vec3 lo = cloud[0], hi = cloud[0];
  for (const auto& p : cloud) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  lo_ = lo;
  // About two points per cell over the bounding box's largest extent.
  const double extent = (hi - lo).maxCoeff();
  const double per_axis = std::max(1.0, std::cbrt(static_cast<double>(cloud.size()) / 2.0));
  cell_ = extent > 0.0 ? extent / per_axis : 1.0;
  for (int k = 0; k < 3; ++k) dims_[k] = std::max(1L, static_cast<long>(std::floor((hi[k] - lo[k]) / cell_)) + 1);

  auto cell_of = [&](const Vec3& p) {
    std::array<long, 3> c{};
    for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = std::clamp(static_cast<long>(std::floor((p[k] - lo_[k]) / cell_)), 0L, dims_[k] - 1);
    return cell_index(c[0], c[1], c[2]);
  };
  const auto cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
  cell_start_.assign(cells + 1, 0);
  std::vector<long> id(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    id[i] = cell_of(cloud[i]);
    ++cell_start_[static_cast<std::size_t>(id[i]) + 1];
  }
  std::partial_sum(cell_start_.begin(), cell_start_.end(), cell_start_.begin());
  points_.resize(cloud.size());
  std::vector<std::size_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < cloud.size(); ++i) points_[fill[static_cast<std::size_t>(id[i])]++] = cloud[i];
}

double NearestNeighbors::distance(const Vec3& q) const {
  long c[3];
  long start = 0;  // Chebyshev distance from the query's cell to the grid
  for (int k = 0; k < 3; ++k) {
    const double f = std::floor((q[k] - lo_[k]) / cell_);
    c[k] = static_cast<long>(std::clamp(f, -1e9, 1e9));
    start = std::max({start, -c[k], c[k] - (dims_[k] - 1)});
  }
  const long max_r = start + std::max({dims_[0], dims_[1], dims_[2]});
  double best = std::numeric_limits<double>::infinity();
  auto scan = [&](long x, long y, long z) {
    const auto id = static_cast<std::size_t>(cell_index(x, y, z));
    for (std::size_t i = cell_start_[id]; i < cell_start_[id + 1]; ++i) best = std::min(best, (q - points_[i]).norm());
  };
  for (long r = start; r <= max_r; ++r) {
    // Unvisited cells are at Chebyshev distance >= r from the query's cell, so at least
    // r - 1 cell widths away; one more cell of slack covers rounding at cell borders.
    if (r >= 3 && best <= static_cast<double>(r - 2) * cell_) break;
    const long x0 = std::max(0L, c[0] - r), x1 = std::min(dims_[0] - 1, c[0] + r);
    const long y0 = std::max(0L, c[1] - r), y1 = std::min(dims_[1] - 1, c[1] + r);
    for (long x = x0; x <= x1; ++x)
      for (long y = y0; y <= y1; ++y) {
        if (std::labs(x - c[0]) == r || std::labs(y - c[1]) == r) {
          for (long z = std::max(0L, c[2] - r); z <= std::min(dims_[2] - 1, c[2] + r); ++z) scan(x, y, z);
        } else {
          if (c[2] - r >= 0 && c[2] - r < dims_[2]) scan(x, y, c[2] - r);
          if (r > 0 && c[2] + r >= 0 && c[2] + r < dims_[2]) scan(x, y, c[2] + r);
        }
      }
  }
  return best;
}

std::vector<double> nearest_distances(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw UsageError("nearest distances need nonempty clouds");
  const NearestNeighbors nn(b);
  std::vector<double> d(a.size());
  const auto n = static_cast<long>(a.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = nn.distance(a[static_cast<std::size_t>(i)]);
  return d;
}

std::vector<double> nearest_distances_serial(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw UsageError("nearest distances need nonempty clouds");
  std::vector<double> d(a.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (const auto& p : b) d[i] = std::min(d[i], (a[i] - p).norm());
  return d;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double share_within(const std::vector<double>& d, double tau) {
  std::size_t k = 0;
  for (double x : d) k += x <= tau;
  return static_cast<double>(k) / static_cast<double>(d.size());
}

}  // namespace

double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw UsageError("chamfer distance of an empty cloud");
  return 0.5 * (mean_of(nearest_distances(a, b)) + mean_of(nearest_distances(b, a)));
}

double fscore(std::span<const Vec3> a, std::span<const Vec3> b, double tau) {
  if (!(tau > 0.0)) throw UsageError("F-score threshold must be positive");
  if (a.empty() || b.empty()) throw UsageError("F-score of an empty cloud");
  const double precision = share_within(nearest_distances(a, b), tau);
  const double recall = share_within(nearest_distances(b, a), tau);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

BestOf best_of_n(std::span<const double> values) {
  if (values.empty()) throw UsageError("best-of-N over no hypotheses");
  BestOf b{values[0], 0};
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < b.value) b = {values[i], i};
  return b;
}

BestOf best_of_n(const std::vector<std::vector<Vec3>>& hypotheses, std::span<const Vec3> gt, const CloudMetric& metric) {
  std::vector<double> v;
  v.reserve(hypotheses.size());
  for (const auto& h : hypotheses) v.push_back(metric(h, gt));
  return best_of_n(v);
}

std::vector<Mat3> cube_rotations() {
  std::vector<Mat3> out;
  std::array<int, 3> perm{0, 1, 2};
  do {
    for (int signs = 0; signs < 8; ++signs) {
      Mat3 R = Mat3::Zero();
      for (int i = 0; i < 3; ++i) R(i, perm[static_cast<std::size_t>(i)]) = (signs >> i) & 1 ? -1.0 : 1.0;
      if (R.determinant() > 0.0) out.push_back(R);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;  // the identity permutation with no sign flips comes first
}

void EvalProtocol::validate() const {
  if (n_points == 0) throw ValidationError("eval protocol needs n_points > 0");
  if (!(f_threshold > 0.0)) throw ValidationError("eval protocol needs a positive F-score threshold");
  if (rotation_set.empty()) throw ValidationError("eval protocol rotation set is empty");
  bool has_identity = false;
  for (const auto& R : rotation_set) {
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-9 || R.determinant() < 0.0)
      throw ValidationError("eval protocol rotation set holds a non-rotation");
    has_identity = has_identity || R == Mat3::Identity();
  }
  if (!has_identity) throw ValidationError("eval protocol rotation set must contain the identity");
}

nlohmann::json protocol_to_json(const EvalProtocol& p) {
  nlohmann::json rots = nlohmann::json::array();
  for (const auto& R : p.rotation_set) {
    nlohmann::json flat = nlohmann::json::array();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) flat.push_back(R(i, j));
    rots.push_back(flat);
  }
  return {{"n_points", p.n_points},
          {"f_threshold", p.f_threshold},
          {"rotation_set", rots},
          {"chamfer", "mean Euclidean nearest-neighbour distance, averaged over both directions"},
          {"reduction", "per-scene mean, then mean and sample std over scenes"}};
}

EvalProtocol protocol_from_json(const nlohmann::json& j) {
  try {
    EvalProtocol p;
    p.n_points = j.at("n_points").get<std::size_t>();
    p.f_threshold = j.at("f_threshold").get<double>();
    if (j.contains("rotation_set")) {
      p.rotation_set.clear();
      for (const auto& flat : j.at("rotation_set")) {
        const auto v = flat.get<std::vector<double>>();
        if (v.size() != 9) throw ValidationError("rotation entries need 9 values");
        Mat3 R;
        for (int i = 0; i < 3; ++i)
          for (int k = 0; k < 3; ++k) R(i, k) = v[static_cast<std::size_t>(3 * i + k)];
        p.rotation_set.push_back(R);
      }
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad eval protocol: ") + e.what());
  }
}

AlignedChamfer aligned_chamfer_detail(std::span<const Vec3> a, std::span<const Vec3> b, const EvalProtocol& protocol) {
  if (protocol.rotation_set.empty()) throw UsageError("aligned chamfer needs at least one rotation");
  AlignedChamfer best{std::numeric_limits<double>::infinity(), 0};
  std::vector<Vec3> rotated(a.size());
  for (std::size_t r = 0; r < protocol.rotation_set.size(); ++r) {
    for (std::size_t i = 0; i < a.size(); ++i) rotated[i] = protocol.rotation_set[r] * a[i];
    const double c = chamfer_l1(rotated, b);
    if (c < best.value) best = {c, r};
  }
  return best;
}

std::vector<Vec3> sample_mesh_surface(const geometry::TriangleMesh& mesh, std::size_t count, Rng& rng) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    total += 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw UsageError("cannot sample a mesh without area");
  std::vector<Vec3> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform(0.0, total);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin()),
                                         mesh.faces.size() - 1);
    const auto& f = mesh.faces[k];
    const double s = std::sqrt(rng.uniform(0.0, 1.0)), t = rng.uniform(0.0, 1.0);
    out.push_back((1.0 - s) * mesh.vertices[f[0]] + s * (1.0 - t) * mesh.vertices[f[1]] + s * t * mesh.vertices[f[2]]);
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw UsageError("mean of no values");
  MeanStd m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::vector<double> oracle_curve(std::span<const HypothesisEval> h) {
  std::vector<double> out;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : h) {
    best = std::min(best, x.chamfer);
    out.push_back(best);
  }
  return out;
}

std::vector<double> inlier_curve(std::span<const HypothesisEval> h) {
  // Hypotheses whose registration failed score zero inliers.
  std::vector<registration::HypothesisScore> scores;
  std::vector<double> out;
  for (const auto& x : h) {
    scores.push_back(x.registered ? registration::HypothesisScore{x.inlier_count, x.mean_residual}
                                  : registration::HypothesisScore{0, std::numeric_limits<double>::infinity()});
    out.push_back(h[registration::select_hypothesis(scores)].chamfer);
  }
  return out;
}

nlohmann::json eval_report(std::span<const ObjectEval> objects, const EvalProtocol& protocol) {
  protocol.validate();
  if (objects.empty()) throw UsageError("eval report over no objects");
  const std::size_t n = objects[0].hypotheses.size();
  if (n == 0) throw UsageError("eval report needs at least one hypothesis per object");

  nlohmann::json rows = nlohmann::json::array();
  std::map<std::string, std::vector<const ObjectEval*>> by_scene;
  for (const auto& o : objects) {
    if (o.hypotheses.size() != n) throw ValidationError("objects carry different hypothesis counts");
    by_scene[o.scene].push_back(&o);
    nlohmann::json hyps = nlohmann::json::array();
    for (const auto& h : o.hypotheses) {
      nlohmann::json hj{{"chamfer", h.chamfer},
                        {"fscore", h.fscore},
                        {"registered", h.registered},
                        {"inlier_count", h.inlier_count},
                        {"mean_residual", h.mean_residual}};
      if (h.norf_chamfer) hj["norf_chamfer"] = *h.norf_chamfer;
      hyps.push_back(std::move(hj));
    }
    const auto best = oracle_curve(o.hypotheses);
    const auto sel = inlier_curve(o.hypotheses);
    rows.push_back({{"scene", o.scene}, {"object", o.object}, {"hypotheses", hyps}, {"oracle_curve", best}, {"inlier_curve", sel}});
  }

  nlohmann::json scenes = nlohmann::json::array();
  std::vector<std::vector<double>> oracle_by_n(n), inlier_by_n(n), first(1);
  for (const auto& [name, objs] : by_scene) {
    std::vector<double> oracle(n, 0.0), inlier(n, 0.0);
    double first_hyp = 0.0;
    for (const auto* o : objs) {
      const auto a = oracle_curve(o->hypotheses);
      const auto b = inlier_curve(o->hypotheses);
      for (std::size_t k = 0; k < n; ++k) {
        oracle[k] += a[k] / static_cast<double>(objs.size());
        inlier[k] += b[k] / static_cast<double>(objs.size());
      }
      first_hyp += o->hypotheses[0].chamfer / static_cast<double>(objs.size());
    }
    for (std::size_t k = 0; k < n; ++k) {
      oracle_by_n[k].push_back(oracle[k]);
      inlier_by_n[k].push_back(inlier[k]);
    }
    first[0].push_back(first_hyp);
    scenes.push_back({{"scene", name}, {"objects", objs.size()}, {"oracle_curve", oracle}, {"inlier_curve", inlier}, {"first_chamfer", first_hyp}});
  }

  auto curve_json = [](const std::vector<std::vector<double>>& per_n) {
    nlohmann::json mean = nlohmann::json::array(), std = nlohmann::json::array();
    for (const auto& v : per_n) {
      const auto m = mean_std(v);
      mean.push_back(m.mean);
      std.push_back(m.std);
    }
    return nlohmann::json{{"mean", mean}, {"std", std}};
  };
  const auto f = mean_std(first[0]);
  return {{"protocol", protocol_to_json(protocol)},
          {"objects", rows},
          {"scenes", scenes},
          {"aggregate",
           {{"scene_count", by_scene.size()},
            {"hypotheses", n},
            {"oracle_curve", curve_json(oracle_by_n)},
            {"inlier_curve", curve_json(inlier_by_n)},
            {"first_chamfer", {{"mean", f.mean}, {"std", f.std}}}}}};
}

}  // namespace omnishape::metrics
