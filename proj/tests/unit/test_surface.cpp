#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "omnishape/core/error.hpp"
#include "omnishape/surface/extract.hpp"
#include "omnishape/triplane/field.hpp"

using namespace omnishape;
using namespace omnishape::surface;

namespace {

SdfBatch sphere(const Vec3& c, double r) {
  return [c, r](std::span<const Vec3> p) {
    std::vector<double> v;
    for (const auto& x : p) v.push_back((x - c).norm() - r);
    return v;
  };
}

SdfBatch box(const Vec3& half) {
  return [half](std::span<const Vec3> p) {
    std::vector<double> v;
    for (const auto& x : p) {
      const Vec3 q = x.cwiseAbs() - half;
      v.push_back(q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0));
    }
    return v;
  };
}

std::size_t corner_count(int index) {
  std::size_t n = 0;
  for (int c = 0; c < 8; ++c) n += (index >> c) & 1;
  return n;
}

}  // namespace

TEST_CASE("marching cubes cases: edge usage and single-corner cases") {
  CHECK(marching_cubes_case(0).empty());
  CHECK(marching_cubes_case(255).empty());
  for (int i = 0; i < 256; ++i) {
    const auto& tris = marching_cubes_case(i);
    // A triangle uses only edges whose endpoints differ in sign.
    for (const auto& t : tris)
      for (int e : t) {
        const auto [a, b] = cube_edge(e);
        CHECK((((i >> a) & 1) != ((i >> b) & 1)));
      }
    // Every sign-changing edge appears in some triangle.
    std::set<int> used;
    for (const auto& t : tris) used.insert(t.begin(), t.end());
    std::size_t crossing = 0;
    for (int e = 0; e < 12; ++e) {
      const auto [a, b] = cube_edge(e);
      crossing += ((i >> a) & 1) != ((i >> b) & 1);
    }
    CHECK(used.size() == crossing);
    // A lone inside (or outside) corner is cut off by one triangle.
    if (corner_count(i) == 1 || corner_count(i) == 7) CHECK(tris.size() == 1);
  }
  CHECK_THROWS_AS(marching_cubes_case(256), UsageError);
  CHECK_THROWS_AS(cube_edge(12), UsageError);
}

TEST_CASE("extract_surface: sphere area, volume, watertight and outward winding") {
  const double r = 0.4;
  ExtractStats st;
  const auto mesh = extract_surface(sphere(Vec3::Zero(), r), 6, &st);
  REQUIRE_FALSE(mesh.faces.empty());
  mesh.validate();
  CHECK(mesh.is_watertight());
  const double area = 4.0 * std::numbers::pi * r * r;
  const double vol = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  MESSAGE("area " << mesh.surface_area() / area << " volume " << signed_volume(mesh) / vol);
  CHECK(std::fabs(mesh.surface_area() / area - 1.0) < 0.02);
  CHECK(std::fabs(signed_volume(mesh) / vol - 1.0) < 0.02);

  const double h = 1.0 / 64.0;
  double worst = 0.0, worst_normal = 0.0;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    worst = std::max(worst, std::fabs(mesh.vertices[i].norm() - r));
    worst_normal = std::max(worst_normal, (mesh.normals[i] - mesh.vertices[i].normalized()).norm());
  }
  CHECK(worst < std::sqrt(3.0) * h);
  CHECK(worst_normal < 1e-6);

  // The octree skips far-away cells: much less than the dense 65^3 lattice.
  CHECK(st.evaluations < 65 * 65 * 65 / 2);
  CHECK(st.leaf_cells > 0);
}

TEST_CASE("extract_surface: constant fields, bad lod and determinism") {
  const SdfBatch outside = [](std::span<const Vec3> p) { return std::vector<double>(p.size(), 1.0); };
  const SdfBatch inside = [](std::span<const Vec3> p) { return std::vector<double>(p.size(), -1.0); };
  CHECK(extract_surface(outside, 5).faces.empty());
  CHECK(extract_surface(inside, 5).faces.empty());
  CHECK_THROWS_AS(extract_surface(outside, 1), UsageError);

  const auto a = extract_surface(sphere(Vec3(0.05, -0.02, 0.1), 0.3), 5);
  const auto b = extract_surface(sphere(Vec3(0.05, -0.02, 0.1), 0.3), 5);
  REQUIRE(a.vertices.size() == b.vertices.size());
  CHECK(a.faces == b.faces);
  for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(a.vertices[i] == b.vertices[i]);
}

TEST_CASE("extract_surface: box is watertight and vertex count scales about 4x per level") {
  std::size_t prev = 0;
  for (int lod = 3; lod <= 6; ++lod) {
    const auto m = extract_surface(box(Vec3(0.3, 0.2, 0.25)), lod);
    CHECK(m.is_watertight());
    CHECK(signed_volume(m) > 0.0);
    if (prev) {
      const double ratio = double(m.vertices.size()) / double(prev);
      MESSAGE("lod " << lod << " ratio " << ratio);
      CHECK(ratio > 3.0);
      CHECK(ratio < 5.0);
    }
    prev = m.vertices.size();
  }
}

TEST_CASE("extract_surface: two touching spheres stay manifold on ambiguous faces") {
  // Two spheres meeting near a lattice face produce saddle configurations.
  const SdfBatch twin = [](std::span<const Vec3> p) {
    std::vector<double> v;
    for (const auto& x : p)
      v.push_back(std::min((x - Vec3(-0.151, 0.003, 0.0)).norm() - 0.15, (x - Vec3(0.151, -0.003, 0.0)).norm() - 0.15));
    return v;
  };
  for (int lod = 3; lod <= 6; ++lod) {
    const auto m = extract_surface(twin, lod);
    CHECK(m.is_watertight());
  }
}

TEST_CASE("triplane field: parallel decode equals serial, points clamp into the cube") {
  Rng rng(3);
  triplane::Triplane z(3, 4);
  for (auto& plane : z.planes)
    for (auto& x : plane) x = rng.normal(0, 0.3);
  nn::Mlp dec({12, 16, 1}, rng);
  std::vector<Vec3> pts;
  for (int i = 0; i < 5000; ++i) pts.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  CHECK(triplane::decode_sdf_batch(dec, z, pts) == triplane::decode_sdf_batch_serial(dec, z, pts));

  const auto f = triplane_field(dec, z);
  const std::vector<Vec3> outside{Vec3(0.6, 0.0, -0.7)};
  CHECK(f(outside)[0] == triplane::decode_sdf(dec, z, Vec3(0.5, 0.0, -0.5)));
}

TEST_CASE("extract_surface: random smooth fields give closed meshes") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vec3> c;
    std::vector<double> w;
    for (int k = 0; k < 12; ++k) {
      c.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
      w.push_back(rng.uniform(-1.0, 1.0));
    }
    const SdfBatch f = [c, w](std::span<const Vec3> p) {
      std::vector<double> v;
      for (const auto& x : p) {
        double s = 0.05;  // later scaled to keep the field 1-Lipschitz, which the octree pruning assumes
        for (std::size_t k = 0; k < c.size(); ++k) s += w[k] * std::exp(-(x - c[k]).squaredNorm() / 0.02);
        v.push_back(std::max(0.02 * s, x.cwiseAbs().maxCoeff() - 0.45));  // closed inside the cube
      }
      return v;
    };
    const auto m = extract_surface(f, 4);
    CHECK(m.is_watertight());
  }
}

TEST_CASE("extract_surface: fitted sphere triplane at lod 6") {
  const double r = 0.4;
  Rng rng(21);
  triplane::SdfSampleSet train;
  while (train.size() < 20000) {
    Vec3 p(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    if (train.size() % 2) {
      p = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized() * r + Vec3(rng.normal(0, 0.02), rng.normal(0, 0.02), rng.normal(0, 0.02));
      if (p.cwiseAbs().maxCoeff() > 0.5) continue;
    }
    train.points.push_back(p);
    train.distances.push_back(p.norm() - r);
  }
  triplane::FitConfig cfg;
  cfg.lod = 4;
  cfg.latent_dim = 8;
  cfg.points_per_epoch = 20000;
  cfg.train.peak_lr = 5e-5;
  cfg.train.total_steps = 3000;
  cfg.train.batch_size = 1000;
  const auto lib = triplane::fit_triplanes(std::span(&train, 1), cfg);
  const auto& z = lib.triplanes[0];

  const auto mesh = extract_surface(lib, z, 6);
  CHECK(mesh.is_watertight());
  const double area = 4.0 * std::numbers::pi * r * r;
  const double vol = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  MESSAGE("area " << mesh.surface_area() / area << " volume " << signed_volume(mesh) / vol);
  CHECK(std::fabs(mesh.surface_area() / area - 1.0) < 0.02);
  CHECK(std::fabs(signed_volume(mesh) / vol - 1.0) < 0.02);

  const auto res = triplane::decode_sdf_batch(lib.decoder, z, mesh.vertices);
  double worst = 0.0;
  for (double v : res) worst = std::max(worst, std::fabs(v));
  MESSAGE("max vertex |sdf| " << worst);
  CHECK(worst < std::sqrt(3.0) / 64.0);
}
