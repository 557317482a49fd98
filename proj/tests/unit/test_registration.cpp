#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omnishape/core/error.hpp"
#include "omnishape/geometry/render.hpp"
#include "omnishape/registration/registration.hpp"

using namespace omnishape;
using namespace omnishape::registration;

namespace {

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

Sim3 random_similarity(Rng& rng) {
  Sim3 T;
  T.rotation = random_rotation(rng);
  T.translation = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  T.scale = rng.uniform(0.2, 3.0);
  return T;
}

std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
  std::vector<Vec3> p(n);
  for (auto& x : p) x = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  return p;
}

std::vector<Vec3> mapped(const Sim3& T, const std::vector<Vec3>& p) {
  std::vector<Vec3> out;
  for (const auto& x : p) out.push_back(T.apply(x));
  return out;
}

// Inliers under a hidden similarity plus uniform-in-box outliers on the scene side.
Correspondences contaminated(std::size_t n, double outlier_fraction, const Sim3& T, Rng& rng) {
  Correspondences c;
  c.norf = random_points(n, rng);
  c.scene = mapped(T, c.norf);
  const auto k = static_cast<std::size_t>(std::lround(outlier_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = rng.index(n);
    c.scene[j] = T.translation + T.scale * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  }
  return c;
}

}  // namespace

TEST_CASE("umeyama: identity, noise-free recovery and planar input") {
  Rng rng(1);
  const auto p = random_points(20, rng);
  const Sim3 I = umeyama(p, p);
  CHECK((I.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(I.translation.norm() < 1e-12);
  CHECK(std::fabs(I.scale - 1.0) < 1e-12);

  for (int trial = 0; trial < 20; ++trial) {
    const Sim3 T = random_similarity(rng);
    const auto src = random_points(50, rng);
    const Sim3 E = umeyama(src, mapped(T, src));
    CHECK(rotation_angle_between(E.rotation, T.rotation) < 1e-6);
    CHECK(std::fabs(E.scale - T.scale) / T.scale < 1e-9);
    CHECK((E.translation - T.translation).norm() < 1e-9);
    CHECK(E.rotation.determinant() > 0.0);
  }

  // All points on z = 0: rank-2 cross-covariance, still a proper rotation.
  std::vector<Vec3> planar;
  for (int i = 0; i < 30; ++i) planar.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0);
  const Sim3 T = random_similarity(rng);
  const Sim3 E = umeyama(planar, mapped(T, planar));
  CHECK(rotation_angle_between(E.rotation, T.rotation) < 1e-6);
  CHECK(std::fabs(E.scale - T.scale) / T.scale < 1e-9);
}

TEST_CASE("umeyama: degenerate inputs raise rank errors") {
  std::vector<Vec3> line;
  for (int i = 0; i < 10; ++i) line.emplace_back(0.1 * i, 0.2 * i, -0.05 * i);
  CHECK_THROWS_AS(umeyama(line, line), RankError);
  const std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS_AS(umeyama(two, two), RankError);
  const std::vector<Vec3> same(5, Vec3(0.1, 0.2, 0.3));
  CHECK_THROWS_AS(umeyama(same, same), RankError);
  CHECK_THROWS_AS(umeyama(std::vector<Vec3>(3), std::vector<Vec3>(4)), ShapeError);
}

TEST_CASE("umeyama: order invariance and covariance under rigid motion") {
  Rng rng(2);
  const Sim3 T = random_similarity(rng);
  auto src = random_points(40, rng);
  auto dst = mapped(T, src);
  for (auto& d : dst) d += Vec3(rng.normal(0, 0.01), rng.normal(0, 0.01), rng.normal(0, 0.01));
  const Sim3 A = umeyama(src, dst);

  std::vector<std::size_t> perm(src.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<Vec3> ps, pd;
  for (auto i : perm) {
    ps.push_back(src[i]);
    pd.push_back(dst[i]);
  }
  const Sim3 B = umeyama(ps, pd);
  CHECK(A.rotation == B.rotation);
  CHECK(A.translation == B.translation);
  CHECK(A.scale == B.scale);

  Sim3 G;
  G.rotation = random_rotation(rng);
  G.translation = Vec3(0.3, -1.0, 2.0);
  const Sim3 C = umeyama(src, mapped(G, dst));
  const Sim3 expect = G * A;
  CHECK((C.rotation - expect.rotation).norm() < 1e-9);
  CHECK((C.translation - expect.translation).norm() < 1e-9);
  CHECK(std::fabs(C.scale - expect.scale) < 1e-9);
}

TEST_CASE("ransac: clean data, 30% outliers over 100 trials, failure") {
  Rng rng(3);
  {
    const Sim3 T = random_similarity(rng);
    const auto c = contaminated(200, 0.0, T, rng);
    const auto r = ransac_register(c, RansacConfig{.threshold = 1e-3 * T.scale, .seed = 1});
    CHECK(r.inlier_count == 200);
  }
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Sim3 T = random_similarity(rng);
    const auto c = contaminated(200, 0.3, T, rng);
    const auto r = ransac_register(c, RansacConfig{.threshold = 0.02 * T.scale, .seed = static_cast<std::uint64_t>(trial)});
    ok += rotation_angle_between(r.transform.rotation, T.rotation) < 1e-3;
  }
  CHECK(ok >= 99);

  Correspondences junk;
  junk.norf = random_points(100, rng);
  junk.scene = random_points(100, rng);
  CHECK_THROWS_AS(ransac_register(junk, RansacConfig{.threshold = 1e-5}), RegistrationFailedError);
  Correspondences tiny;
  tiny.norf = random_points(2, rng);
  tiny.scene = tiny.norf;
  CHECK_THROWS_AS(ransac_register(tiny, RansacConfig{}), RegistrationFailedError);
}

TEST_CASE("ransac: parallel equals serial; inliers grow with the threshold") {
  Rng rng(4);
  const Sim3 T = random_similarity(rng);
  auto c = contaminated(300, 0.4, T, rng);
  for (auto& s : c.scene) s += T.scale * Vec3(rng.normal(0, 0.01), rng.normal(0, 0.01), rng.normal(0, 0.01));
  const RansacConfig cfg{.threshold = 0.03 * T.scale, .iterations = 256, .seed = 9};
  const auto a = ransac_register(c, cfg);
  const auto b = ransac_register_serial(c, cfg);
  CHECK(a.inlier_count == b.inlier_count);
  CHECK(a.mean_residual == b.mean_residual);
  CHECK(a.transform.rotation == b.transform.rotation);

  std::size_t prev = 0;
  for (double th : {0.005, 0.01, 0.02, 0.04, 0.08, 0.16}) {
    const auto r = ransac_register(c, RansacConfig{.threshold = th * T.scale, .iterations = 256, .seed = 9});
    CHECK(r.inlier_count >= prev);
    prev = r.inlier_count;
  }
}

TEST_CASE("select_hypothesis: count, then residual, then index") {
  const std::vector<HypothesisScore> s{{10, 0.5}, {50, 0.01}, {50, 0.02}};
  CHECK(select_hypothesis(s) == 1);
  CHECK(select_hypothesis(std::vector<HypothesisScore>{{3, 1.0}}) == 0);
  CHECK(select_hypothesis(std::vector<HypothesisScore>{{7, 0.1}, {7, 0.1}}) == 0);
  CHECK_THROWS_AS(select_hypothesis(std::vector<HypothesisScore>{}), UsageError);
}

TEST_CASE("back_project: principal point, round trip and skipped pixels") {
  geometry::Camera cam;
  cam.size = 32;
  cam.fx = 40;
  cam.fy = 44;
  cam.cx = cam.cy = 15.5;  // centre of pixel (15, 15)
  std::vector<double> depth(32 * 32, 0.0);
  std::vector<std::uint8_t> mask(32 * 32, 0);
  depth[15 * 32 + 15] = 2.5;
  mask[15 * 32 + 15] = 1;
  mask[3] = 1;  // masked but no depth
  const auto bp = back_project(depth, mask, cam);
  REQUIRE(bp.points.size() == 1);
  CHECK((bp.points[0] - Vec3(0, 0, 2.5)).norm() < 1e-15);
  CHECK(bp.skipped == 1);

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const int u = static_cast<int>(rng.index(32)), v = static_cast<int>(rng.index(32));
    const double z = rng.uniform(0.5, 5.0);
    const Vec3 p = cam.back_project(u, v, z);
    CHECK(std::fabs(cam.fx * p.x() / p.z() + cam.cx - (u + 0.5)) < 1e-9);
    CHECK(std::fabs(cam.fy * p.y() / p.z() + cam.cy - (v + 0.5)) < 1e-9);
    CHECK(std::fabs(p.z() - z) < 1e-12);
  }
}

TEST_CASE("back_project + registration on a rendered scene") {
  using namespace geometry;
  Rng rng(6);
  Sim3 pose;
  pose.rotation = random_rotation(rng);
  pose.translation = Vec3(0.2, -0.1, 0.4);
  pose.scale = 0.3;
  const Shape s = placed(normalize_to_unit_cube(make_box(Vec3::Zero(), Vec3(1.0, 0.6, 0.4))), pose);
  const Camera cam = orbit_camera(pose.translation, 0.8, 0.7, 0.5, 60, 32);
  const NorfMap m = render_norf(s, cam);
  REQUIRE(m.hit_count() > 100);

  const auto bp = back_project(m.depth, m.mask, cam);
  CHECK(bp.skipped == 0);
  double worst = 0.0;
  for (const auto& p : bp.points) worst = std::max(worst, std::fabs(sdf_value(s, s.to_world.apply_inverse(cam.to_world(p)))));
  CHECK(worst < 1e-3);

  std::vector<Vec3> norf;
  std::vector<std::size_t> pixels;
  for (std::size_t i = 0; i < m.mask.size(); ++i)
    if (m.mask[i]) {
      norf.emplace_back(m.coords[3 * i], m.coords[3 * i + 1], m.coords[3 * i + 2]);
      pixels.push_back(i);
    }
  const auto corr = pair_by_pixel(norf, pixels, m.depth, m.mask, cam);
  CHECK(corr.size() == norf.size());
  const auto r = ransac_register(corr, RansacConfig{.threshold = default_threshold(corr.scene), .seed = 2});
  CHECK(r.inlier_count == corr.size());
  CHECK(rotation_angle_between(r.transform.rotation, pose.rotation) < 1e-6);
  CHECK(std::fabs(r.transform.scale - pose.scale) < 1e-6);

  const auto back = registration_from_json(registration_to_json(r));
  CHECK(back.inlier_count == r.inlier_count);
  CHECK((back.transform.rotation - r.transform.rotation).norm() == 0.0);
  CHECK(back.transform.scale == r.transform.scale);
  CHECK_THROWS_AS(registration_from_json(nlohmann::json{{"scale", 1}}), ValidationError);
}
