#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "omnishape/geometry/mesh.hpp"
#include "omnishape/triplane/field.hpp"

namespace omnishape::surface {

// Signed distance for a batch of points inside the unit cube.
using SdfBatch = std::function<std::vector<double>(std::span<const Vec3>)>;

// Decoded triplane field. Query points are clamped into the cube first so finite
// differences at the boundary stay defined.
SdfBatch triplane_field(const nn::Mlp& decoder, const triplane::Triplane& z);

struct ExtractStats {
  std::size_t evaluations = 0;  // distinct field samples
  std::size_t leaf_cells = 0;   // cells at full depth that were polygonised
  std::size_t nodes = 0;        // octree nodes visited
};

// Octree over [-0.5, 0.5]^3: a node is split while it may cross the surface (corner sign
// change, or |sdf(centre)| below its half-diagonal); every split path reaches depth lod,
// where marching cubes with linear edge interpolation polygonises sign-changing cells.
// Vertices shared between cells are merged, faces wind counter-clockwise seen from the
// positive side and per-vertex normals come from central differences of the field.
// UsageError for lod < 2; an all-positive or all-negative field gives an empty mesh.
geometry::TriangleMesh extract_surface(const SdfBatch& field, int lod, ExtractStats* stats = nullptr);
geometry::TriangleMesh extract_surface(const nn::Mlp& decoder, const triplane::Triplane& z, int lod);
inline geometry::TriangleMesh extract_surface(const triplane::FieldLibrary& lib, const triplane::Triplane& z, int lod) {
  return extract_surface(lib.decoder, z, lod);
}

inline constexpr double kNormalStep = 1e-3;

// Marching-cubes case for one sign configuration: triangles as triples of cube-edge ids.
// Corner c sits at (c & 1, (c >> 1) & 1, (c >> 2) & 1); bit c of the case index is set
// when corner c is inside (negative). Edge ids follow cube_edge().
const std::vector<std::array<int, 3>>& marching_cubes_case(int index);
std::array<int, 2> cube_edge(int edge);

// Enclosed volume by the divergence theorem; positive for outward winding.
double signed_volume(const geometry::TriangleMesh& mesh);

}  // namespace omnishape::surface
