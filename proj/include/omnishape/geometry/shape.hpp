#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnishape/core/rng.hpp"
#include "omnishape/core/sim3.hpp"
#include "omnishape/geometry/mesh.hpp"
#include "omnishape/triplane/sdf_samples.hpp"

namespace omnishape::geometry {

enum class ShapeKind { Sphere, Box, Cup, Ell, Mesh };
std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

struct OrientedBox {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  Vec3 half_extents = Vec3::Constant(0.5);
};

struct Capsule {
  Vec3 a, b;
  double radius;
};

// Closed-bottom hollow cylinder. In its own frame the axis is +y with the opening at
// the top: outer radius `radius`, total height `height`, side wall thickness `wall`,
// floor thickness `bottom`.
struct CupBody {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();
  double radius = 0.3, height = 0.6, wall = 0.05, bottom = 0.06;
};

struct CupSpec {
  double radius = 0.3, height = 0.6, wall = 0.05, bottom = 0.06;
  bool handle = true;
  double handle_reach = 0.18;    // how far the handle sticks out past the wall
  double handle_span = 0.35;     // vertical distance between its attachment points
  double handle_thickness = 0.035;
  double azimuth = 0.0;          // rotation about +y, radians; handle starts on +x
};

// A solid in the current frame plus the similarity taking that frame to metric world
// coordinates. After normalize_to_unit_cube the current frame is the NORF frame.
struct Shape {
  ShapeKind kind = ShapeKind::Sphere;
  Vec3 center = Vec3::Zero();  // sphere
  double radius = 0.5;
  std::vector<OrientedBox> boxes;  // box: one, ell: several (union)
  CupBody cup;
  std::vector<Capsule> handle;
  std::shared_ptr<const TriangleMesh> mesh;
  bool mesh_watertight = false;
  Sim3 to_world;
};

Shape make_sphere(const Vec3& center, double radius);
Shape make_box(const Vec3& center, const Vec3& half_extents, const Mat3& rotation = Mat3::Identity());
Shape make_cup(const CupSpec& spec);
Shape make_ell(std::vector<OrientedBox> parts);
Shape make_mesh(TriangleMesh mesh);

Eigen::AlignedBox3d bounds(const Shape& shape);

// Moves the geometry by `t` while keeping its world placement: to_world becomes
// to_world * t^-1.
Shape transformed(const Shape& shape, const Sim3& t);
// Centres the bounding box at the origin and scales its largest extent to exactly 1.
// DegeneracyError for a zero-extent shape.
Shape normalize_to_unit_cube(const Shape& shape);
// Sets the NORF -> world similarity used for rendering.
Shape placed(const Shape& shape, const Sim3& norf_to_world);

using SignedDistance = geometry::SignedDistance;
SignedDistance sdf(const Shape& shape, const Vec3& p);
inline double sdf_value(const Shape& shape, const Vec3& p) { return sdf(shape, p).value; }
// Central-difference gradient with step h.
Vec3 sdf_gradient(const Shape& shape, const Vec3& p, double h = 1e-6);

struct SurfaceHit {
  double t;
  Vec3 point;
  Vec3 normal;  // outward unit normal, current frame
};
// First surface crossing along origin + t * dir with t > 0 (dir need not be unit).
std::optional<SurfaceHit> intersect(const Shape& shape, const Vec3& origin, const Vec3& dir);

struct SampleSpec {
  std::size_t count = 5000;
  double uniform_fraction = 0.5;  // rest are near-surface
  double sigma = 0.02;
};
// Points on the surface, approximately area-uniform.
std::vector<Vec3> sample_surface(const Shape& shape, std::size_t count, Rng& rng);
// Supervision samples in the unit cube: uniform points and surface points jittered by
// N(0, sigma^2) per axis (redrawn until inside the cube).
triplane::SdfSampleSet sample_sdf_points(const Shape& shape, const SampleSpec& spec, Rng& rng);

nlohmann::json shape_to_json(const Shape& shape);
// Meshes are stored inline; a "ply" entry (resolved against `base`) is also accepted.
Shape shape_from_json(const nlohmann::json& j, const std::filesystem::path& base = {});

}  // namespace omnishape::geometry
