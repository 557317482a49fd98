#include "omnishape/geometry/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numbers>
#include <sstream>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"

namespace omnishape::geometry {

bool TriangleMesh::is_watertight() const {
  if (faces.empty()) return false;
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) {
      const auto a = f[e], b = f[(e + 1) % 3];
      if (a == b) return false;
      if (++directed[{a, b}] > 1) return false;
    }
  for (const auto& [edge, count] : directed)
    if (!directed.count({edge.second, edge.first})) return false;
  return true;
}

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (const auto& f : faces)
    area += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  return area;
}

void TriangleMesh::validate() const {
  for (const auto& v : vertices)
    if (!v.allFinite()) throw ValidationError("mesh has a non-finite vertex");
  for (const auto& f : faces)
    for (auto i : f)
      if (i >= vertices.size()) throw ValidationError("mesh face index out of range");
  if (!normals.empty() && normals.size() != vertices.size()) throw ValidationError("mesh normal count mismatch");
}

TriangleMesh icosphere(const Vec3& center, double radius, int level) {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
                         {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<std::uint32_t, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const auto idx = static_cast<std::uint32_t>(v.size() - 1);
      mid.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const auto a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh mesh;
  mesh.faces = std::move(f);
  for (const auto& p : v) mesh.vertices.push_back(center + radius * p);
  return mesh;
}

double icosphere_chord_error(double radius, int level) {
  const TriangleMesh m = icosphere(Vec3::Zero(), 1.0, level);
  double worst = 0.0;
  for (const auto& f : m.faces) {
    // The face plane is closest to the centre at the foot of the perpendicular, which for
    // these near-equilateral faces lies inside the triangle.
    const Vec3 n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).normalized();
    worst = std::max(worst, 1.0 - std::fabs(n.dot(m.vertices[f[0]])));
  }
  return radius * worst;
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  auto done = [&](const Vec3& q) { return ClosestPoint{q, (p - q).squaredNorm()}; };
  if (d1 <= 0 && d2 <= 0) return done(a);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return done(b);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return done(a + (d1 / (d1 - d3)) * ab);
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return done(c);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return done(a + (d2 / (d2 - d6)) * ac);
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return done(b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b));
  const double denom = 1.0 / (va + vb + vc);
  return done(a + ab * (vb * denom) + ac * (vc * denom));
}

double winding_number(const TriangleMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const Vec3 a = mesh.vertices[f[0]] - p, b = mesh.vertices[f[1]] - p, c = mesh.vertices[f[2]] - p;
    const double la = a.norm(), lb = b.norm(), lc = c.norm();
    const double num = a.dot(b.cross(c));
    const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

SignedDistance mesh_signed_distance(const TriangleMesh& mesh, const Vec3& p, bool watertight) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : mesh.faces)
    best = std::min(best, closest_point_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]).distance_sq);
  const double d = std::sqrt(best);
  return {winding_number(mesh, p) > 0.5 ? -d : d, watertight};
}

std::optional<RayHit> intersect_mesh(const TriangleMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min) {
  std::optional<RayHit> best;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    const Vec3& v0 = mesh.vertices[f[0]];
    const Vec3 e1 = mesh.vertices[f[1]] - v0, e2 = mesh.vertices[f[2]] - v0;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::fabs(det) < 1e-300) continue;
    const double inv = 1.0 / det;
    const Vec3 tv = origin - v0;
    const double u = tv.dot(pv) * inv;
    if (u < 0.0 || u > 1.0) continue;
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv;
    if (v < 0.0 || u + v > 1.0) continue;
    const double t = e2.dot(qv) * inv;
    if (t > t_min && (!best || t < best->t)) best = RayHit{t, i};
  }
  return best;
}

TriangleMesh transformed(const TriangleMesh& mesh, const Sim3& t) {
  TriangleMesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  for (auto& n : out.normals) n = t.rotation * n;
  return out;
}

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  mesh.validate();
  const bool with_normals = !mesh.normals.empty();
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\nelement vertex " << mesh.vertices.size()
         << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (with_normals) header << "property float nx\nproperty float ny\nproperty float nz\n";
  header << "element face " << mesh.faces.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  io::ByteWriter w;
  w.bytes(header.str());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(mesh.vertices[i][k]));
    if (with_normals)
      for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(mesh.normals[i][k]));
  }
  for (const auto& f : mesh.faces) {
    w.bytes(std::string(1, '\3'));
    for (auto idx : f) w.u32(idx);
  }
  w.save(path);
}

namespace {

std::size_t scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "float" || type == "int32" || type == "uint32" || type == "float32") return 4;
  if (type == "double" || type == "float64") return 8;
  throw ValidationError("PLY: unknown property type " + type);
}

double read_scalar(const std::uint8_t* p, const std::string& type) {
  if (type == "float" || type == "float32") { float v; std::memcpy(&v, p, 4); return v; }
  if (type == "double" || type == "float64") { double v; std::memcpy(&v, p, 8); return v; }
  if (type == "uchar" || type == "uint8") return p[0];
  if (type == "char" || type == "int8") return static_cast<std::int8_t>(p[0]);
  if (type == "int" || type == "int32") { std::int32_t v; std::memcpy(&v, p, 4); return v; }
  if (type == "uint" || type == "uint32") { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
  if (type == "short" || type == "int16") { std::int16_t v; std::memcpy(&v, p, 2); return v; }
  if (type == "ushort" || type == "uint16") { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
  throw ValidationError("PLY: unknown property type " + type);
}

}  // namespace

TriangleMesh read_ply(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  const std::string text(data.begin(), data.begin() + std::min<std::size_t>(data.size(), 4096));
  const auto end = text.find("end_header\n");
  if (text.rfind("ply\n", 0) != 0 || end == std::string::npos) throw ValidationError("not a PLY file: " + path.string());
  std::istringstream header(text.substr(0, end));
  std::string line;
  struct Prop {
    std::string name, type, count_type;
    bool list = false;
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Prop> props;
  };
  std::vector<Element> elements;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian") throw ValidationError("PLY: only binary_little_endian is supported");
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw ValidationError("PLY: property before element");
      Prop p;
      ls >> p.type;
      if (p.type == "list") {
        p.list = true;
        ls >> p.count_type >> p.type;
      }
      ls >> p.name;
      elements.back().props.push_back(p);
    }
  }
  std::size_t pos = end + std::string("end_header\n").size();
  auto need = [&](std::size_t n) {
    if (pos + n > data.size()) throw ValidationError("PLY: truncated body in " + path.string());
  };
  TriangleMesh mesh;
  for (const auto& e : elements) {
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 v = Vec3::Zero(), n = Vec3::Zero();
      bool has_n = false;
      for (const auto& p : e.props) {
        if (p.list) {
          const std::size_t cs = scalar_size(p.count_type), is = scalar_size(p.type);
          need(cs);
          const auto count = static_cast<std::size_t>(read_scalar(&data[pos], p.count_type));
          pos += cs;
          need(count * is);
          std::vector<std::uint32_t> idx(count);
          for (std::size_t k = 0; k < count; ++k) idx[k] = static_cast<std::uint32_t>(read_scalar(&data[pos + k * is], p.type));
          pos += count * is;
          if (e.name == "face")
            for (std::size_t k = 1; k + 1 < count; ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
          continue;
        }
        const std::size_t sz = scalar_size(p.type);
        need(sz);
        const double val = read_scalar(&data[pos], p.type);
        pos += sz;
        if (e.name != "vertex") continue;
        if (p.name == "x") v.x() = val;
        else if (p.name == "y") v.y() = val;
        else if (p.name == "z") v.z() = val;
        else if (p.name == "nx") { n.x() = val; has_n = true; }
        else if (p.name == "ny") n.y() = val;
        else if (p.name == "nz") n.z() = val;
      }
      if (e.name == "vertex") {
        mesh.vertices.push_back(v);
        if (has_n) mesh.normals.push_back(n);
      }
    }
  }
  mesh.validate();
  return mesh;
}

}  // namespace omnishape::geometry
