#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "omnishape/core/error.hpp"
#include "omnishape/geometry/render.hpp"

using namespace omnishape;
using namespace omnishape::geometry;

namespace {

Vec3 random_point(Rng& rng, double half = 0.5) {
  return {rng.uniform(-half, half), rng.uniform(-half, half), rng.uniform(-half, half)};
}

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

std::vector<Shape> analytic_shapes() {
  CupSpec plain;
  plain.handle = false;
  CupSpec handled;
  handled.azimuth = 0.7;
  return {
      normalize_to_unit_cube(make_sphere(Vec3(0.1, -0.2, 0.3), 0.4)),
      normalize_to_unit_cube(make_box(Vec3(0.2, 0, 0), Vec3(0.5, 0.3, 0.2), Eigen::AngleAxisd(0.4, Vec3::UnitY()).toRotationMatrix())),
      normalize_to_unit_cube(make_cup(plain)),
      normalize_to_unit_cube(make_cup(handled)),
      normalize_to_unit_cube(make_ell({OrientedBox{Vec3(0, 0, 0), Mat3::Identity(), Vec3(0.5, 0.1, 0.3)},
                                       OrientedBox{Vec3(-0.4, 0.3, 0), Mat3::Identity(), Vec3(0.1, 0.3, 0.3)}})),
  };
}

Sim3 random_placement(Rng& rng) {
  Sim3 s;
  s.rotation = random_rotation(rng);
  s.translation = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
  s.scale = rng.uniform(0.1, 0.3);
  return s;
}

}  // namespace

TEST_CASE("normalize_to_unit_cube examples") {
  const Shape cube = normalize_to_unit_cube(make_box(Vec3(1, 1, 1), Vec3(1, 1, 1)));
  const auto b = bounds(cube);
  CHECK((b.min() - Vec3::Constant(-0.5)).norm() < 1e-15);
  CHECK((b.max() - Vec3::Constant(0.5)).norm() < 1e-15);

  const Shape slab = normalize_to_unit_cube(make_box(Vec3(3, -1, 2), Vec3(1, 0.5, 0.5)));
  const Vec3 ext = bounds(slab).sizes();
  CHECK(ext.x() == doctest::Approx(1.0));
  CHECK(ext.y() == doctest::Approx(0.5));
  CHECK(ext.z() == doctest::Approx(0.5));
  CHECK(bounds(slab).center().norm() < 1e-12);
  // World placement is unchanged: the NORF origin maps back to the original centre.
  CHECK((slab.to_world.apply(Vec3::Zero()) - Vec3(3, -1, 2)).norm() < 1e-12);

  CHECK_THROWS_AS(normalize_to_unit_cube(make_box(Vec3::Zero(), Vec3::Zero())), DegeneracyError);
}

TEST_CASE("normalize_to_unit_cube: random mesh against a vertex scan") {
  Rng rng(11);
  TriangleMesh m;
  for (int i = 0; i < 50; ++i) m.vertices.push_back(Vec3(rng.uniform(-3, 5), rng.uniform(0, 1), rng.uniform(-2, 2)));
  for (std::uint32_t i = 0; i + 2 < 50; ++i) m.faces.push_back({i, i + 1, i + 2});
  const Shape s = normalize_to_unit_cube(make_mesh(m));
  Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
  for (const auto& v : s.mesh->vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  CHECK((hi - lo).maxCoeff() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK((hi + lo).norm() < 1e-12);
  CHECK(lo.minCoeff() >= -0.5 - 1e-12);
  CHECK(hi.maxCoeff() <= 0.5 + 1e-12);
}

TEST_CASE("sdf: analytic examples") {
  CHECK(sdf_value(make_sphere(Vec3::Zero(), 0.4), Vec3::Zero()) == doctest::Approx(-0.4));
  CHECK(sdf_value(make_box(Vec3::Zero(), Vec3(0.5, 0.25, 0.25)), Vec3(0.75, 0, 0)) == doctest::Approx(0.25));
  CHECK(sdf_value(make_box(Vec3::Zero(), Vec3(0.5, 0.25, 0.25)), Vec3(0, 0, 0)) == doctest::Approx(-0.25));
  CHECK(sdf_value(make_box(Vec3::Zero(), Vec3(0.5, 0.5, 0.5)), Vec3(0.8, 0.9, 0.5)) == doctest::Approx(0.5));

  CupSpec spec;
  spec.handle = false;
  const Shape cup = make_cup(spec);  // radius 0.3, height 0.6, wall 0.05, bottom 0.06
  CHECK(sdf_value(cup, Vec3(0.275, 0.0, 0.0)) == doctest::Approx(-0.025));  // middle of the wall
  CHECK(sdf_value(cup, Vec3(0.0, 0.0, 0.0)) == doctest::Approx(0.24));      // cavity, floor is nearest
  CHECK(sdf_value(cup, Vec3(0.1, 0.2, 0.0)) == doctest::Approx(0.15));      // cavity, wall is nearest
  CHECK(sdf_value(cup, Vec3(0.0, -0.27, 0.0)) == doctest::Approx(-0.03));   // inside the floor
  CHECK(sdf_value(cup, Vec3(0.0, 0.5, 0.0)) == doctest::Approx(std::hypot(0.25, 0.2)));  // above the rim
}

TEST_CASE("sdf: icosphere mesh agrees with the analytic sphere") {
  const int level = 3;
  const double r = 0.4;
  const Shape mesh = make_mesh(icosphere(Vec3::Zero(), r, level));
  CHECK(mesh.mesh_watertight);
  const Shape sphere = make_sphere(Vec3::Zero(), r);
  const double chord = icosphere_chord_error(r, level);
  Rng rng(12);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = random_point(rng);
    const auto d = sdf(mesh, p);
    CHECK(d.sign_reliable);
    worst = std::max(worst, std::fabs(d.value - sdf_value(sphere, p)));
  }
  MESSAGE("worst " << worst << " chord " << chord);
  CHECK(worst < 2.0 * chord);
}

TEST_CASE("sdf: open mesh is flagged as sign-unreliable") {
  TriangleMesh m = icosphere(Vec3::Zero(), 0.4, 1);
  m.faces.pop_back();
  const Shape s = make_mesh(m);
  CHECK_FALSE(s.mesh_watertight);
  CHECK_FALSE(sdf(s, Vec3::Zero()).sign_reliable);
}

TEST_CASE("sdf: magnitude equals distance to a dense surface sample") {
  Rng rng(13);
  for (const auto& s : analytic_shapes()) {
    const auto surface = sample_surface(s, 40000, rng);
    for (int i = 0; i < 100; ++i) {
      const Vec3 p = random_point(rng);
      double nearest = 1e9;
      for (const auto& q : surface) nearest = std::min(nearest, (p - q).norm());
      const double d = sdf_value(s, p);
      // Unions of solids are exact outside only; inside, min() may overshoot the depth.
      if (d >= 0.0 || s.kind == ShapeKind::Sphere || s.kind == ShapeKind::Box)
        CHECK(std::fabs(std::fabs(d) - nearest) < 0.012);
      else
        CHECK(-d >= nearest - 0.012);
    }
  }
}

TEST_CASE("sdf: 1-Lipschitz on random pairs") {
  Rng rng(14);
  for (const auto& s : analytic_shapes())
    for (int i = 0; i < 2000; ++i) {
      const Vec3 a = random_point(rng, 0.7), b = a + 0.05 * random_point(rng);
      CHECK(std::fabs(sdf_value(s, a) - sdf_value(s, b)) <= (a - b).norm() * (1 + 1e-12));
    }
}

TEST_CASE("sample_sdf_points") {
  Rng rng(15);
  const Shape s = normalize_to_unit_cube(make_cup(CupSpec{}));
  SampleSpec uniform{2000, 1.0, 0.02};
  const auto u = sample_sdf_points(s, uniform, rng);
  CHECK(u.size() == 2000);
  for (const auto& p : u.points) CHECK(p.cwiseAbs().maxCoeff() <= 0.5);

  SampleSpec near{4000, 0.0, 0.02};
  auto ns = sample_sdf_points(s, near, rng);
  std::vector<double> mags;
  for (double d : ns.distances) mags.push_back(std::fabs(d));
  std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
  CHECK(mags[mags.size() / 2] < 0.03);
  CHECK_NOTHROW(ns.validate());

  Rng a(99), b(99);
  const auto x = sample_sdf_points(s, SampleSpec{500, 0.5, 0.02}, a);
  const auto y = sample_sdf_points(s, SampleSpec{500, 0.5, 0.02}, b);
  CHECK(x.distances == y.distances);
  CHECK_THROWS_AS(sample_sdf_points(s, SampleSpec{0, 0.5, 0.02}, a), UsageError);
}

TEST_CASE("camera conventions") {
  const Camera cam = look_at(Vec3(0, 0, 2), Vec3::Zero(), Vec3::UnitY(), 50, 32);
  CHECK_NOTHROW(cam.validate());
  // World +x is image right, world +y is image up (camera -y).
  CHECK((cam.rotation * Vec3::UnitX() - Vec3::UnitX()).norm() < 1e-12);
  CHECK((cam.rotation * Vec3::UnitY() + Vec3::UnitY()).norm() < 1e-12);
  CHECK((cam.center() - Vec3(0, 0, 2)).norm() < 1e-12);
  const Vec3 p = cam.back_project(3, 7, 1.5);
  CHECK(p.z() == 1.5);
  const Vec3 dir = cam.ray_direction(3, 7);
  CHECK((cam.to_camera(cam.center() + 1.5 * dir) - p).norm() < 1e-12);
  CHECK((camera_from_json(camera_to_json(cam)).rotation - cam.rotation).norm() == 0.0);
}

TEST_CASE("render_norf: fronto-parallel cube face") {
  const Shape cube = normalize_to_unit_cube(make_box(Vec3::Zero(), Vec3::Constant(0.5)));
  const Camera cam = look_at(Vec3(3, 0.1, 0.05), Vec3(0, 0.1, 0.05), Vec3::UnitY(), 40, 32);
  const NorfMap m = render_norf(cube, cam);
  REQUIRE(m.hit_count() > 100);
  for (std::size_t i = 0; i < m.mask.size(); ++i) {
    if (!m.mask[i]) continue;
    CHECK(m.coords[3 * i] == 0.5);
    CHECK(m.normals[3 * i] == 1.0);
    CHECK(m.normals[3 * i + 1] == 0.0);
    CHECK(m.normals[3 * i + 2] == 0.0);
  }
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("render_norf: sphere centre pixel and silhouette area") {
  const double r = 0.5, dist = 2.0, f = 60.0;
  const int d = 63;
  const Shape sphere = normalize_to_unit_cube(make_sphere(Vec3::Zero(), r));
  const Camera cam = look_at(Vec3(0, 0, dist), Vec3::Zero(), Vec3::UnitY(), f, d);
  const NorfMap m = render_norf(sphere, cam);
  const std::size_t c = m.pixel(31, 31);
  REQUIRE(m.mask[c]);
  CHECK((Vec3(m.coords[3 * c], m.coords[3 * c + 1], m.coords[3 * c + 2]) - Vec3(0, 0, r)).norm() < 1e-12);
  CHECK(m.depth[c] == doctest::Approx(dist - r).epsilon(1e-12));

  const double disc = f * r / std::sqrt(dist * dist - r * r);
  const double expected_off = double(d * d) - std::numbers::pi * disc * disc;
  const double off = double(d * d - m.hit_count());
  CHECK(std::fabs(off - expected_off) / expected_off < 0.02);

  const auto empty = render_norf(sphere, look_at(Vec3(0, 0, dist), Vec3(0, 5, 0), Vec3::UnitX(), f, d));
  CHECK(empty.empty());
}

TEST_CASE("render_norf: NORF coordinates reproduce depth back-projection under placement") {
  Rng rng(16);
  auto shapes = analytic_shapes();
  shapes.push_back(normalize_to_unit_cube(make_mesh(icosphere(Vec3::Zero(), 1.0, 2))));
  for (const auto& base : shapes) {
    const Shape s = placed(base, random_placement(rng));
    const Vec3 centre = s.to_world.apply(Vec3::Zero());
    const Camera cam = orbit_camera(centre, 2.5 * s.to_world.scale, rng.uniform(-1, 1), rng.uniform(0, 0.6), 40, 24);
    const NorfMap m = render_norf(s, cam);
    REQUIRE(m.hit_count() > 20);
    CHECK_NOTHROW(m.validate());
    double worst = 0.0;
    for (int v = 0; v < m.size; ++v)
      for (int u = 0; u < m.size; ++u) {
        const std::size_t i = m.pixel(u, v);
        if (!m.mask[i]) continue;
        const Vec3 x(m.coords[3 * i], m.coords[3 * i + 1], m.coords[3 * i + 2]);
        const Vec3 from_norf = s.to_world.apply(x);
        const Vec3 from_depth = cam.to_world(cam.back_project(u, v, m.depth[i]));
        worst = std::max(worst, (from_norf - from_depth).norm());
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("render_norf: normals are unit and follow the sdf gradient") {
  Rng rng(17);
  for (const auto& s : analytic_shapes()) {
    const Camera cam = orbit_camera(Vec3::Zero(), 2.0, rng.uniform(-1, 1), rng.uniform(0, 0.6), 40, 24);
    const NorfMap m = render_norf(s, cam);
    for (std::size_t i = 0; i < m.mask.size(); ++i) {
      if (!m.mask[i]) continue;
      const Vec3 n(m.normals[3 * i], m.normals[3 * i + 1], m.normals[3 * i + 2]);
      const Vec3 x(m.coords[3 * i], m.coords[3 * i + 1], m.coords[3 * i + 2]);
      CHECK(std::fabs(n.norm() - 1.0) < 1e-9);
      const Vec3 g = sdf_gradient(s, x, 1e-5);
      if (g.norm() < 0.5) continue;  // on a crease the gradient is undefined
      CHECK(n.dot(g.normalized()) > 0.99);
    }
  }
}

TEST_CASE("render_norf: parallel and serial renders agree exactly") {
  const Shape s = normalize_to_unit_cube(make_cup(CupSpec{}));
  const Camera cam = orbit_camera(Vec3::Zero(), 2.0, 0.4, 0.3, 40, 32);
  const NorfMap a = render_norf(s, cam), b = render_norf_serial(s, cam);
  CHECK(a.coords == b.coords);
  CHECK(a.normals == b.normals);
  CHECK(a.depth == b.depth);
}

TEST_CASE("render_observation shading") {
  CHECK(shade(Vec3::UnitZ(), Vec3::UnitZ()) == 1.0);
  CHECK(shade(Vec3::UnitZ(), Vec3::UnitX()) == doctest::Approx(0.1));
  CHECK(shade(Vec3::UnitZ(), -Vec3::UnitZ()) == doctest::Approx(0.1));

  // Cube face towards a camera that also holds the light: full intensity.
  const Shape cube = normalize_to_unit_cube(make_box(Vec3::Zero(), Vec3::Constant(0.5)));
  const Camera cam = look_at(Vec3(0, 0, 3), Vec3::Zero(), Vec3::UnitY(), 40, 16);
  const Observation o = render_observation(cube, cam, Vec3::UnitZ());
  for (std::size_t i = 0; i < o.mask.size(); ++i)
    if (o.mask[i]) {
      CHECK(o.image[i] == 1.0);
      CHECK(o.normals[3 * i + 2] == doctest::Approx(-1.0));  // facing the camera
    }
}

TEST_CASE("render_observation: invariant to camera roll up to resampling") {
  const Shape s = normalize_to_unit_cube(make_cup(CupSpec{}));
  const int d = 32;
  const Camera cam = orbit_camera(Vec3::Zero(), 2.0, 0.5, 0.3, 40, d);
  Camera rolled = cam;
  const Mat3 roll = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  rolled.rotation = roll * cam.rotation;
  rolled.translation = roll * cam.translation;
  const Vec3 light(0.3, 0.8, 0.5);
  const Observation a = render_observation(s, cam, light), b = render_observation(s, rolled, light);
  const Observation a_rot = rotate_observation(a, std::numbers::pi / 2);
  double worst = 0.0;
  std::size_t compared = 0;
  for (std::size_t i = 0; i < a_rot.image.size(); ++i) {
    if (!a_rot.mask[i] || !b.mask[i]) continue;
    worst = std::max(worst, std::fabs(a_rot.image[i] - b.image[i]));
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::fabs(a_rot.normals[3 * i + k] - b.normals[3 * i + k]));
    ++compared;
  }
  CHECK(compared > 100);
  CHECK(worst < 1e-6);
}

TEST_CASE("augmentations keep the pair aligned") {
  const Shape s = normalize_to_unit_cube(make_cup(CupSpec{}));
  const Camera cam = orbit_camera(Vec3::Zero(), 2.0, 0.5, 0.3, 40, 32);
  Observation o = render_observation(s, cam, Vec3(0, 1, 1));
  NorfMap m = render_norf(s, cam);
  Rng rng(18);
  AugmentConfig always{1.0, 1.0, 0.3};
  augment_pair(o, m, always, rng);
  CHECK_NOTHROW(o.validate());
  CHECK_NOTHROW(m.validate());
  // Rotated map still back-projects consistently through its rolled camera.
  for (int v = 0; v < m.size; ++v)
    for (int u = 0; u < m.size; ++u) {
      const std::size_t i = m.pixel(u, v);
      if (!m.mask[i]) continue;
      const Vec3 from_norf = s.to_world.apply(Vec3(m.coords[3 * i], m.coords[3 * i + 1], m.coords[3 * i + 2]));
      const Vec3 ray = m.camera.to_world(m.camera.back_project(u, v, m.depth[i]));
      CHECK((from_norf - ray).norm() < 0.1);  // nearest-neighbour resampling: within a pixel footprint
    }
}

TEST_CASE("file round trips") {
  const auto dir = std::filesystem::temp_directory_path() / "omnishape_geometry_test";
  std::filesystem::create_directories(dir);
  const Shape s = normalize_to_unit_cube(make_cup(CupSpec{}));
  const Camera cam = orbit_camera(Vec3::Zero(), 2.0, 0.5, 0.3, 40, 16);
  const NorfMap m = render_norf(s, cam);
  save_norf_map(dir / "norf", m);
  const NorfMap back = load_norf_map(dir / "norf");
  CHECK(back.mask == m.mask);
  for (std::size_t i = 0; i < m.coords.size(); ++i) CHECK(back.coords[i] == static_cast<float>(m.coords[i]));

  const Observation o = render_observation(s, cam, Vec3(0, 1, 1));
  save_observation(dir / "obs", o);
  const Observation ob = load_observation(dir / "obs");
  for (std::size_t i = 0; i < o.image.size(); ++i) CHECK(ob.image[i] == static_cast<float>(o.image[i]));

  TriangleMesh mesh = icosphere(Vec3::Zero(), 0.3, 1);
  for (const auto& v : mesh.vertices) mesh.normals.push_back(v.normalized());
  write_ply(dir / "m.ply", mesh);
  const TriangleMesh mb = read_ply(dir / "m.ply");
  CHECK(mb.faces == mesh.faces);
  REQUIRE(mb.vertices.size() == mesh.vertices.size());
  CHECK((mb.vertices[5] - mesh.vertices[5]).norm() < 1e-6);
  CHECK(mb.normals.size() == mesh.normals.size());

  const Shape rt = shape_from_json(shape_to_json(s));
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const Vec3 p = random_point(rng);
    CHECK(sdf_value(rt, p) == sdf_value(s, p));
  }
  std::filesystem::remove_all(dir);
}
