#include "omnishape/registration/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include <Eigen/SVD>

#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::registration {

void Correspondences::validate() const {
  if (norf.size() != scene.size()) throw ValidationError("correspondence lists differ in length");
}

namespace {

bool lex_less(const Vec3& a, const Vec3& b) {
  for (int k = 0; k < 3; ++k)
    if (a[k] != b[k]) return a[k] < b[k];
  return false;
}

}  // namespace

Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw ShapeError("umeyama: point lists differ in length");
  const std::size_t n = src.size();
  if (n < 3) throw RankError("umeyama needs at least 3 pairs");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (lex_less(src[a], src[b])) return true;
    if (lex_less(src[b], src[a])) return false;
    return lex_less(dst[a], dst[b]);
  });

  Vec3 ms = Vec3::Zero(), md = Vec3::Zero();
  for (std::size_t i : order) {
    ms += src[i];
    md += dst[i];
  }
  ms /= static_cast<double>(n);
  md /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i : order) {
    const Vec3 a = src[i] - ms, b = dst[i] - md;
    cov += b * a.transpose();
    var_s += a.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(var_s > 0.0) || !(sv[1] > 1e-10 * sv[0]) || !(sv[0] > 0.0))
    throw RankError("degenerate correspondence configuration (collinear or coincident points)");
  Vec3 sign(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign[2] = -1.0;

  Sim3 T;
  T.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
  T.scale = sv.dot(sign) / var_s;
  T.translation = md - T.scale * (T.rotation * ms);
  return T;
}

double residual(const Sim3& T, const Vec3& src, const Vec3& dst) { return (T.apply(src) - dst).norm(); }

namespace {

struct Scored {
  Sim3 model;
  std::size_t count = 0;
  double mean = 0.0;
  bool valid = false;
};

// Strictly better under (more inliers, lower mean residual).
bool better(const Scored& a, const Scored& b) {
  if (!a.valid) return false;
  if (!b.valid) return true;
  if (a.count != b.count) return a.count > b.count;
  return a.mean < b.mean;
}

Scored score(const Sim3& T, const Correspondences& c, double threshold) {
  Scored s;
  s.model = T;
  s.valid = true;
  double acc = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double r = residual(T, c.norf[i], c.scene[i]);
    if (r < threshold) {
      ++s.count;
      acc += r;
    }
  }
  s.mean = s.count ? acc / static_cast<double>(s.count) : 0.0;
  return s;
}

Scored hypothesis(const Correspondences& c, const RansacConfig& cfg, std::size_t iteration) {
  Rng rng(derive_seed(cfg.seed, iteration));
  const std::size_t n = c.size();
  std::size_t idx[3];
  idx[0] = rng.index(n);
  do idx[1] = rng.index(n);
  while (idx[1] == idx[0]);
  do idx[2] = rng.index(n);
  while (idx[2] == idx[0] || idx[2] == idx[1]);
  const Vec3 s[3] = {c.norf[idx[0]], c.norf[idx[1]], c.norf[idx[2]]};
  const Vec3 d[3] = {c.scene[idx[0]], c.scene[idx[1]], c.scene[idx[2]]};
  try {
    return score(umeyama(s, d), c, cfg.threshold);
  } catch (const RankError&) {
    return {};
  }
}

RegistrationResult finish(const Correspondences& c, const RansacConfig& cfg, std::vector<Scored> candidates) {
  Scored best;
  for (const auto& s : candidates)
    if (better(s, best)) best = s;
  if (!best.valid || best.count < 3) throw RegistrationFailedError("no similarity model reaches 3 inliers");

  for (std::size_t round = 0; round < cfg.max_refits; ++round) {
    std::vector<Vec3> src, dst;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (residual(best.model, c.norf[i], c.scene[i]) < cfg.threshold) {
        src.push_back(c.norf[i]);
        dst.push_back(c.scene[i]);
      }
    Scored refit;
    try {
      refit = score(umeyama(src, dst), c, cfg.threshold);
    } catch (const RankError&) {
      break;
    }
    if (!better(refit, best)) break;
    best = refit;
  }
  return {best.model, best.count, best.mean, cfg.threshold};
}

void check_config(const Correspondences& c, const RansacConfig& cfg) {
  c.validate();
  if (!(cfg.threshold > 0.0)) throw UsageError("RANSAC threshold must be positive");
  if (cfg.iterations == 0) throw UsageError("RANSAC needs at least one iteration");
  if (c.size() < 3) throw RegistrationFailedError("fewer than 3 correspondences");
}

}  // namespace

RegistrationResult ransac_register_serial(const Correspondences& corr, const RansacConfig& cfg) {
  check_config(corr, cfg);
  std::vector<Scored> all(cfg.iterations);
  for (std::size_t i = 0; i < cfg.iterations; ++i) all[i] = hypothesis(corr, cfg, i);
  return finish(corr, cfg, std::move(all));
}

RegistrationResult ransac_register(const Correspondences& corr, const RansacConfig& cfg) {
  check_config(corr, cfg);
  std::vector<Scored> all(cfg.iterations);
  const auto n = static_cast<long>(cfg.iterations);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = hypothesis(corr, cfg, static_cast<std::size_t>(i));
  return finish(corr, cfg, std::move(all));
}

RegistrationResult ransac_register(const Correspondences& corr, double threshold, std::size_t iterations, Rng& rng) {
  return ransac_register(corr, RansacConfig{threshold, iterations, rng.engine()()});
}

double default_threshold(std::span<const Vec3> scene) {
  if (scene.empty()) throw UsageError("no scene points to size the threshold");
  Vec3 lo = scene[0], hi = scene[0];
  for (const auto& p : scene) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diag = (hi - lo).norm();
  if (!(diag > 0.0)) throw DegeneracyError("scene points have zero extent");
  return kThresholdFraction * diag;
}

std::size_t select_hypothesis(std::span<const HypothesisScore> scores) {
  if (scores.empty()) throw UsageError("no hypotheses to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const auto& a = scores[i];
    const auto& b = scores[best];
    if (a.inlier_count > b.inlier_count || (a.inlier_count == b.inlier_count && a.mean_residual < b.mean_residual)) best = i;
  }
  return best;
}

BackProjection back_project(std::span<const double> depth, std::span<const std::uint8_t> mask, const geometry::Camera& cam) {
  cam.validate();
  const std::size_t n = static_cast<std::size_t>(cam.size) * cam.size;
  if (depth.size() != n || mask.size() != n) throw ShapeError("depth and mask must be size x size");
  BackProjection out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double z = depth[i];
    if (!(z > 0.0) || !std::isfinite(z)) {
      ++out.skipped;
      continue;
    }
    const int u = static_cast<int>(i % cam.size), v = static_cast<int>(i / cam.size);
    out.points.push_back(cam.back_project(u, v, z));
    out.pixels.push_back(i);
  }
  return out;
}

Correspondences pair_by_pixel(std::span<const Vec3> norf_points, std::span<const std::size_t> norf_pixels,
                              std::span<const double> depth, std::span<const std::uint8_t> depth_mask,
                              const geometry::Camera& cam) {
  if (norf_points.size() != norf_pixels.size()) throw ShapeError("NORF points and pixel indices differ in length");
  const BackProjection bp = back_project(depth, depth_mask, cam);
  std::vector<long> slot(static_cast<std::size_t>(cam.size) * cam.size, -1);
  for (std::size_t k = 0; k < bp.pixels.size(); ++k) slot[bp.pixels[k]] = static_cast<long>(k);
  Correspondences c;
  for (std::size_t i = 0; i < norf_points.size(); ++i) {
    if (norf_pixels[i] >= slot.size()) throw ShapeError("NORF pixel index outside the image");
    const long k = slot[norf_pixels[i]];
    if (k < 0) continue;
    c.norf.push_back(norf_points[i]);
    c.scene.push_back(cam.to_world(bp.points[static_cast<std::size_t>(k)]));
  }
  return c;
}

nlohmann::json registration_to_json(const RegistrationResult& r) {
  nlohmann::json R = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) R.push_back(r.transform.rotation(i, j));
  return {{"rotation", R},
          {"translation", to_json(r.transform.translation)},
          {"scale", r.transform.scale},
          {"inlier_count", r.inlier_count},
          {"mean_residual", r.mean_residual},
          {"threshold", r.threshold}};
}

RegistrationResult registration_from_json(const nlohmann::json& j) {
  try {
    RegistrationResult r;
    const auto R = j.at("rotation").get<std::vector<double>>();
    if (R.size() != 9) throw ValidationError("rotation must have 9 entries");
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) r.transform.rotation(i, k) = R[static_cast<std::size_t>(3 * i + k)];
    r.transform.translation = vec3_from_json(j.at("translation"));
    r.transform.scale = j.at("scale").get<double>();
    r.inlier_count = j.at("inlier_count").get<std::size_t>();
    r.mean_residual = j.at("mean_residual").get<double>();
    r.threshold = j.at("threshold").get<double>();
    if (!(r.transform.scale > 0.0)) throw ValidationError("registration scale must be positive");
    if ((r.transform.rotation.transpose() * r.transform.rotation - Mat3::Identity()).norm() > 1e-6)
      throw ValidationError("registration rotation is not orthonormal");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad registration report: ") + e.what());
  }
}

}  // namespace omnishape::registration
