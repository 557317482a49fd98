#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "omnishape/core/sim3.hpp"

namespace omnishape::geometry {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;  // counter-clockwise seen from outside
  std::vector<Vec3> normals;                         // optional per-vertex normals

  // Every undirected edge used by exactly two faces, in opposite directions.
  bool is_watertight() const;
  double surface_area() const;
  // Throws ValidationError for out-of-range indices or non-finite vertices.
  void validate() const;
};

// Subdivided icosahedron projected onto the sphere; 20 * 4^level faces.
TriangleMesh icosphere(const Vec3& center, double radius, int level);

// Largest distance between a flat face and the sphere it approximates (sagitta of the
// longest edge), for tolerance computations.
double icosphere_chord_error(double radius, int level);

struct ClosestPoint {
  Vec3 point;
  double distance_sq;
};
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Generalised winding number: ~1 inside a closed outward-oriented mesh, ~0 outside.
double winding_number(const TriangleMesh& mesh, const Vec3& p);

struct SignedDistance {
  double value;
  bool sign_reliable;
};
// Unsigned distance to the nearest triangle, negative where the winding number exceeds
// 1/2. sign_reliable is false for meshes that are not watertight.
SignedDistance mesh_signed_distance(const TriangleMesh& mesh, const Vec3& p, bool watertight);

struct RayHit {
  double t;
  std::size_t face;
};
// Nearest intersection with t > t_min, Moller-Trumbore against every face.
std::optional<RayHit> intersect_mesh(const TriangleMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min = 0.0);

TriangleMesh transformed(const TriangleMesh& mesh, const Sim3& t);

// Binary little-endian PLY with float32 x, y, z (and nx, ny, nz when normals are present)
// and uchar/int32 face lists.
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_ply(const std::filesystem::path& path);

}  // namespace omnishape::geometry
