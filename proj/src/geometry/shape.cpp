#include "omnishape/geometry/shape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::geometry {
namespace {

double box_sdf(const OrientedBox& b, const Vec3& p) {
  const Vec3 q = (b.rotation.transpose() * (p - b.center)).cwiseAbs() - b.half_extents;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

double capsule_sdf(const Capsule& c, const Vec3& p) {
  const Vec3 ab = c.b - c.a;
  const double len2 = ab.squaredNorm();
  const double h = len2 > 0 ? std::clamp((p - c.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (c.a + h * ab)).norm() - c.radius;
}

double segment_distance_2d(double px, double py, double ax, double ay, double bx, double by) {
  const double ex = bx - ax, ey = by - ay;
  const double len2 = ex * ex + ey * ey;
  const double h = len2 > 0 ? std::clamp(((px - ax) * ex + (py - ay) * ey) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(px - (ax + h * ex), py - (ay + h * ey));
}

// Exact: the body is a solid of revolution, so its distance is the 2D distance from
// (radial, height) to the U-shaped cross-section outline, excluding the axis itself.
double cup_body_sdf(const CupBody& c, const Vec3& p) {
  const Vec3 l = c.rotation.transpose() * (p - c.center);
  const double rho = std::hypot(l.x(), l.z()), y = l.y();
  const double r = c.radius, ri = c.radius - c.wall, y0 = -0.5 * c.height, y1 = 0.5 * c.height, yf = y0 + c.bottom;
  const std::array<std::array<double, 2>, 6> outline = {{{0, y0}, {r, y0}, {r, y1}, {ri, y1}, {ri, yf}, {0, yf}}};
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < outline.size(); ++i)
    d = std::min(d, segment_distance_2d(rho, y, outline[i][0], outline[i][1], outline[i + 1][0], outline[i + 1][1]));
  const bool inside = rho <= r && y >= y0 && y <= y1 && !(rho < ri && y > yf);
  return inside ? -d : d;
}

Eigen::AlignedBox3d box_bounds(const OrientedBox& b) {
  const Vec3 e = b.rotation.cwiseAbs() * b.half_extents;
  return {b.center - e, b.center + e};
}

std::optional<SurfaceHit> intersect_box(const OrientedBox& b, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = b.rotation.transpose() * (origin - b.center);
  const Vec3 d = b.rotation.transpose() * dir;
  double t_near = -std::numeric_limits<double>::infinity(), t_far = std::numeric_limits<double>::infinity();
  int near_axis = -1, far_axis = -1;
  for (int k = 0; k < 3; ++k) {
    if (std::fabs(d[k]) < 1e-300) {
      if (std::fabs(o[k]) > b.half_extents[k]) return std::nullopt;
      continue;
    }
    double t0 = (-b.half_extents[k] - o[k]) / d[k], t1 = (b.half_extents[k] - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > t_near) t_near = t0, near_axis = k;
    if (t1 < t_far) t_far = t1, far_axis = k;
  }
  if (t_near > t_far || t_far <= 0.0) return std::nullopt;
  const bool entering = t_near > 0.0;
  const double t = entering ? t_near : t_far;
  const int axis = entering ? near_axis : far_axis;
  Vec3 pl = o + t * d;
  Vec3 nl = Vec3::Zero();
  const double side = entering ? (d[axis] > 0 ? -1.0 : 1.0) : (d[axis] > 0 ? 1.0 : -1.0);
  pl[axis] = side * b.half_extents[axis];  // land exactly on the face
  nl[axis] = side;
  return SurfaceHit{t, b.rotation * pl + b.center, b.rotation * nl};
}

std::optional<double> enter_bounds(const Eigen::AlignedBox3d& box, const Vec3& o, const Vec3& d) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 3; ++k) {
    if (std::fabs(d[k]) < 1e-300) {
      if (o[k] < box.min()[k] || o[k] > box.max()[k]) return std::nullopt;
      continue;
    }
    double a = (box.min()[k] - o[k]) / d[k], b = (box.max()[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  if (t0 > t1) return std::nullopt;
  return t0;
}

std::optional<SurfaceHit> sphere_trace(const Shape& s, const Vec3& origin, const Vec3& dir) {
  const auto box = bounds(s);
  Eigen::AlignedBox3d padded(box.min() - Vec3::Constant(1e-6), box.max() + Vec3::Constant(1e-6));
  const auto entry = enter_bounds(padded, origin, dir);
  if (!entry) return std::nullopt;
  const double speed = dir.norm();
  double t = *entry;
  const double t_exit = t + padded.diagonal().norm() / speed;
  for (int it = 0; it < 1000 && t <= t_exit; ++it) {
    const Vec3 p = origin + t * dir;
    const double d = sdf_value(s, p);
    if (d < 1e-10) {
      if (d < -1e-7 && it == 0) return std::nullopt;  // started inside
      return SurfaceHit{t, p, sdf_gradient(s, p).normalized()};
    }
    t += d / speed;
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Cup: return "cup";
    case ShapeKind::Ell: return "ell";
    case ShapeKind::Mesh: return "mesh";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  for (auto k : {ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Cup, ShapeKind::Ell, ShapeKind::Mesh})
    if (to_string(k) == name) return k;
  throw ValidationError("unknown shape kind '" + name + "'");
}

Shape make_sphere(const Vec3& center, double radius) {
  if (!(radius > 0)) throw DegeneracyError("sphere radius must be positive");
  Shape s;
  s.kind = ShapeKind::Sphere;
  s.center = center;
  s.radius = radius;
  return s;
}

Shape make_box(const Vec3& center, const Vec3& half_extents, const Mat3& rotation) {
  Shape s;
  s.kind = ShapeKind::Box;
  s.boxes = {OrientedBox{center, rotation, half_extents}};
  return s;
}

Shape make_cup(const CupSpec& spec) {
  if (!(spec.radius > spec.wall && spec.wall > 0 && spec.height > spec.bottom && spec.bottom > 0))
    throw DegeneracyError("cup needs radius > wall > 0 and height > bottom > 0");
  Shape s;
  s.kind = ShapeKind::Cup;
  const Mat3 rot = Eigen::AngleAxisd(spec.azimuth, Vec3::UnitY()).toRotationMatrix();
  s.cup = CupBody{Vec3::Zero(), rot, spec.radius, spec.height, spec.wall, spec.bottom};
  if (spec.handle) {
    const double x0 = spec.radius - 0.5 * spec.wall, x1 = spec.radius + spec.handle_reach;
    const double y0 = -0.5 * spec.handle_span, y1 = 0.5 * spec.handle_span;
    const Vec3 a = rot * Vec3(x0, y1, 0), b = rot * Vec3(x1, y1, 0), c = rot * Vec3(x1, y0, 0), d = rot * Vec3(x0, y0, 0);
    s.handle = {{a, b, spec.handle_thickness}, {b, c, spec.handle_thickness}, {c, d, spec.handle_thickness}};
  }
  return s;
}

Shape make_ell(std::vector<OrientedBox> parts) {
  if (parts.empty()) throw DegeneracyError("ell solid needs at least one box");
  Shape s;
  s.kind = ShapeKind::Ell;
  s.boxes = std::move(parts);
  return s;
}

Shape make_mesh(TriangleMesh mesh) {
  mesh.validate();
  if (mesh.faces.empty()) throw DegeneracyError("mesh has no faces");
  Shape s;
  s.kind = ShapeKind::Mesh;
  s.mesh_watertight = mesh.is_watertight();
  s.mesh = std::make_shared<const TriangleMesh>(std::move(mesh));
  return s;
}

Eigen::AlignedBox3d bounds(const Shape& s) {
  Eigen::AlignedBox3d box;
  box.setEmpty();
  switch (s.kind) {
    case ShapeKind::Sphere:
      box.extend(s.center - Vec3::Constant(s.radius));
      box.extend(s.center + Vec3::Constant(s.radius));
      break;
    case ShapeKind::Box:
    case ShapeKind::Ell:
      for (const auto& b : s.boxes) box.extend(box_bounds(b));
      break;
    case ShapeKind::Cup: {
      const Vec3 axis = s.cup.rotation.col(1);
      Vec3 e;
      for (int k = 0; k < 3; ++k)
        e[k] = std::fabs(axis[k]) * 0.5 * s.cup.height + s.cup.radius * std::sqrt(std::max(0.0, 1.0 - axis[k] * axis[k]));
      box.extend(s.cup.center - e);
      box.extend(s.cup.center + e);
      for (const auto& c : s.handle)
        for (const Vec3& p : {c.a, c.b}) {
          box.extend(p - Vec3::Constant(c.radius));
          box.extend(p + Vec3::Constant(c.radius));
        }
      break;
    }
    case ShapeKind::Mesh:
      for (const auto& v : s.mesh->vertices) box.extend(v);
      break;
  }
  return box;
}

Shape transformed(const Shape& s, const Sim3& t) {
  Shape out = s;
  out.center = t.apply(s.center);
  out.radius = s.radius * t.scale;
  for (auto& b : out.boxes) {
    b.center = t.apply(b.center);
    b.rotation = t.rotation * b.rotation;
    b.half_extents *= t.scale;
  }
  out.cup.center = t.apply(s.cup.center);
  out.cup.rotation = t.rotation * s.cup.rotation;
  out.cup.radius *= t.scale;
  out.cup.height *= t.scale;
  out.cup.wall *= t.scale;
  out.cup.bottom *= t.scale;
  for (auto& c : out.handle) {
    c.a = t.apply(c.a);
    c.b = t.apply(c.b);
    c.radius *= t.scale;
  }
  if (s.mesh) out.mesh = std::make_shared<const TriangleMesh>(geometry::transformed(*s.mesh, t));
  out.to_world = s.to_world * t.inverse();
  return out;
}

Shape normalize_to_unit_cube(const Shape& s) {
  const auto box = bounds(s);
  const double extent = box.sizes().maxCoeff();
  if (!(extent > 1e-12) || !std::isfinite(extent)) throw DegeneracyError("shape has zero extent");
  Sim3 t;
  t.scale = 1.0 / extent;
  t.translation = -box.center() / extent;
  return transformed(s, t);
}

Shape placed(const Shape& s, const Sim3& norf_to_world) {
  Shape out = s;
  out.to_world = norf_to_world;
  return out;
}

SignedDistance sdf(const Shape& s, const Vec3& p) {
  switch (s.kind) {
    case ShapeKind::Sphere: return {(p - s.center).norm() - s.radius, true};
    case ShapeKind::Box:
    case ShapeKind::Ell: {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& b : s.boxes) d = std::min(d, box_sdf(b, p));
      return {d, true};
    }
    case ShapeKind::Cup: {
      double d = cup_body_sdf(s.cup, p);
      for (const auto& c : s.handle) d = std::min(d, capsule_sdf(c, p));
      return {d, true};
    }
    case ShapeKind::Mesh: return mesh_signed_distance(*s.mesh, p, s.mesh_watertight);
  }
  return {0.0, false};
}

Vec3 sdf_gradient(const Shape& s, const Vec3& p, double h) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 a = p, b = p;
    a[k] += h;
    b[k] -= h;
    g[k] = (sdf_value(s, a) - sdf_value(s, b)) / (2.0 * h);
  }
  return g;
}

std::optional<SurfaceHit> intersect(const Shape& s, const Vec3& origin, const Vec3& dir) {
  switch (s.kind) {
    case ShapeKind::Sphere: {
      const Vec3 oc = origin - s.center;
      const double a = dir.squaredNorm(), b = oc.dot(dir), c = oc.squaredNorm() - s.radius * s.radius;
      const double disc = b * b - a * c;
      if (disc < 0) return std::nullopt;
      const double sq = std::sqrt(disc);
      double t = (-b - sq) / a;
      if (t <= 0) t = (-b + sq) / a;
      if (t <= 0) return std::nullopt;
      const Vec3 p = origin + t * dir;
      return SurfaceHit{t, p, (p - s.center).normalized()};
    }
    case ShapeKind::Box:
    case ShapeKind::Ell: {
      std::optional<SurfaceHit> best;
      for (const auto& b : s.boxes) {
        auto h = intersect_box(b, origin, dir);
        if (h && (!best || h->t < best->t)) best = h;
      }
      return best;
    }
    case ShapeKind::Cup: return sphere_trace(s, origin, dir);
    case ShapeKind::Mesh: {
      const auto hit = intersect_mesh(*s.mesh, origin, dir);
      if (!hit) return std::nullopt;
      const auto& f = s.mesh->faces[hit->face];
      const auto& v = s.mesh->vertices;
      Vec3 n = (v[f[1]] - v[f[0]]).cross(v[f[2]] - v[f[0]]).normalized();
      return SurfaceHit{hit->t, origin + hit->t * dir, n};
    }
  }
  return std::nullopt;
}

std::vector<Vec3> sample_surface(const Shape& s, std::size_t count, Rng& rng) {
  std::vector<Vec3> out;
  out.reserve(count);
  if (s.kind == ShapeKind::Sphere) {
    while (out.size() < count) {
      const Vec3 d(rng.normal(), rng.normal(), rng.normal());
      if (d.norm() < 1e-12) continue;
      out.push_back(s.center + s.radius * d.normalized());
    }
    return out;
  }
  if (s.kind == ShapeKind::Mesh) {
    const auto& m = *s.mesh;
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& f : m.faces) {
      total += 0.5 * (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).norm();
      cumulative.push_back(total);
    }
    while (out.size() < count) {
      const double pick = rng.uniform() * total;
      const std::size_t fi = std::min<std::size_t>(std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(),
                                                   m.faces.size() - 1);
      double u = rng.uniform(), v = rng.uniform();
      if (u + v > 1.0) u = 1.0 - u, v = 1.0 - v;
      const auto& f = m.faces[fi];
      out.push_back(m.vertices[f[0]] + u * (m.vertices[f[1]] - m.vertices[f[0]]) + v * (m.vertices[f[2]] - m.vertices[f[0]]));
    }
    return out;
  }
  // Uniform points in a thin shell around the surface, projected onto it.
  const auto box = bounds(s);
  const double band = 0.005 * box.sizes().maxCoeff();
  const Vec3 lo = box.min() - Vec3::Constant(band), hi = box.max() + Vec3::Constant(band);
  while (out.size() < count) {
    Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    double d = sdf_value(s, p);
    if (std::fabs(d) >= band) continue;
    for (int it = 0; it < 4 && std::fabs(d) > 1e-12; ++it) {
      const Vec3 g = sdf_gradient(s, p, 1e-7);
      const double gn = g.norm();
      if (gn < 1e-9) break;
      p -= d * g / gn;
      d = sdf_value(s, p);
    }
    if (std::fabs(d) < 1e-6 * box.sizes().maxCoeff()) out.push_back(p);
  }
  return out;
}

triplane::SdfSampleSet sample_sdf_points(const Shape& s, const SampleSpec& spec, Rng& rng) {
  if (spec.count == 0) throw UsageError("sample_sdf_points: count must be positive");
  if (!(spec.uniform_fraction >= 0 && spec.uniform_fraction <= 1)) throw UsageError("uniform_fraction must be in [0, 1]");
  const auto n_uniform = static_cast<std::size_t>(std::llround(spec.uniform_fraction * static_cast<double>(spec.count)));
  triplane::SdfSampleSet out;
  out.points.reserve(spec.count);
  for (std::size_t i = 0; i < n_uniform; ++i)
    out.points.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
  if (spec.count > n_uniform) {
    const auto surface = sample_surface(s, spec.count - n_uniform, rng);
    for (const auto& q : surface) {
      Vec3 p;
      int tries = 0;
      do {
        p = q + spec.sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
      } while (p.cwiseAbs().maxCoeff() > 0.5 && ++tries < 64);
      if (p.cwiseAbs().maxCoeff() > 0.5) p = q.cwiseMax(-0.5).cwiseMin(0.5);
      out.points.push_back(p);
    }
  }
  out.distances.reserve(out.points.size());
  for (const auto& p : out.points) out.distances.push_back(sdf_value(s, p));
  return out;
}

nlohmann::json shape_to_json(const Shape& s) {
  nlohmann::json j;
  j["kind"] = to_string(s.kind);
  j["to_world"] = to_json(s.to_world);
  auto box_json = [](const OrientedBox& b) {
    return nlohmann::json{{"center", to_json(b.center)}, {"rotation", to_json(b.rotation)}, {"half_extents", to_json(b.half_extents)}};
  };
  switch (s.kind) {
    case ShapeKind::Sphere:
      j["center"] = to_json(s.center);
      j["radius"] = s.radius;
      break;
    case ShapeKind::Box:
    case ShapeKind::Ell:
      j["boxes"] = nlohmann::json::array();
      for (const auto& b : s.boxes) j["boxes"].push_back(box_json(b));
      break;
    case ShapeKind::Cup:
      j["body"] = {{"center", to_json(s.cup.center)}, {"rotation", to_json(s.cup.rotation)}, {"radius", s.cup.radius},
                   {"height", s.cup.height}, {"wall", s.cup.wall}, {"bottom", s.cup.bottom}};
      j["handle"] = nlohmann::json::array();
      for (const auto& c : s.handle) j["handle"].push_back({{"a", to_json(c.a)}, {"b", to_json(c.b)}, {"radius", c.radius}});
      break;
    case ShapeKind::Mesh: {
      nlohmann::json v = nlohmann::json::array(), f = nlohmann::json::array();
      for (const auto& p : s.mesh->vertices) v.push_back(to_json(p));
      for (const auto& t : s.mesh->faces) f.push_back({t[0], t[1], t[2]});
      j["vertices"] = v;
      j["faces"] = f;
      break;
    }
  }
  return j;
}

Shape shape_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  try {
    const ShapeKind kind = shape_kind_from_string(j.at("kind").get<std::string>());
    Shape s;
    auto box_from = [](const nlohmann::json& b) {
      return OrientedBox{vec3_from_json(b.at("center")), mat3_from_json(b.at("rotation")), vec3_from_json(b.at("half_extents"))};
    };
    switch (kind) {
      case ShapeKind::Sphere: s = make_sphere(vec3_from_json(j.at("center")), j.at("radius").get<double>()); break;
      case ShapeKind::Box: s = make_box(Vec3::Zero(), Vec3::Ones()); s.boxes = {box_from(j.at("boxes").at(0))}; break;
      case ShapeKind::Ell: {
        std::vector<OrientedBox> parts;
        for (const auto& b : j.at("boxes")) parts.push_back(box_from(b));
        s = make_ell(std::move(parts));
        break;
      }
      case ShapeKind::Cup: {
        s.kind = ShapeKind::Cup;
        const auto& b = j.at("body");
        s.cup = CupBody{vec3_from_json(b.at("center")), mat3_from_json(b.at("rotation")), b.at("radius").get<double>(),
                        b.at("height").get<double>(), b.at("wall").get<double>(), b.at("bottom").get<double>()};
        for (const auto& c : j.at("handle"))
          s.handle.push_back({vec3_from_json(c.at("a")), vec3_from_json(c.at("b")), c.at("radius").get<double>()});
        break;
      }
      case ShapeKind::Mesh: {
        TriangleMesh m;
        if (j.contains("ply")) {
          m = read_ply(base / j.at("ply").get<std::string>());
        } else {
          for (const auto& v : j.at("vertices")) m.vertices.push_back(vec3_from_json(v));
          for (const auto& f : j.at("faces")) m.faces.push_back({f[0].get<std::uint32_t>(), f[1].get<std::uint32_t>(), f[2].get<std::uint32_t>()});
        }
        s = make_mesh(std::move(m));
        break;
      }
    }
    if (j.contains("to_world")) s.to_world = sim3_from_json(j.at("to_world"));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed shape JSON: ") + e.what());
  }
}

}  // namespace omnishape::geometry
