#include "omnishape/surface/extract.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "omnishape/core/error.hpp"

namespace omnishape::surface {
namespace {

// Edge e joins corners a and a | (1 << axis) with axis = e / 4.
struct EdgeTable {
  std::array<std::array<int, 2>, 12> ends{};
  std::array<std::array<int, 8>, 8> id{};

  EdgeTable() {
    for (auto& row : id) row.fill(-1);
    int e = 0;
    for (int axis = 0; axis < 3; ++axis)
      for (int c = 0; c < 8; ++c) {
        if (c & (1 << axis)) continue;
        const int d = c | (1 << axis);
        ends[static_cast<std::size_t>(e)] = {c, d};
        id[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] = e;
        id[static_cast<std::size_t>(d)][static_cast<std::size_t>(c)] = e;
        ++e;
      }
  }
};

const EdgeTable& edges() {
  static const EdgeTable t;
  return t;
}

// Each face contributes boundary segments of the inside region; walking the face
// counter-clockwise about its outward normal, an edge entering the inside run is joined
// to the next edge leaving it. On faces with two diagonal inside corners this keeps the
// inside corners apart, and both cells sharing the face make the same choice. Chained
// segments form closed loops that are fanned into triangles.
std::vector<std::array<int, 3>> build_case(int index) {
  const auto& E = edges();
  auto inside = [index](int c) { return ((index >> c) & 1) != 0; };
  std::array<int, 12> next;
  next.fill(-1);
  for (int k = 0; k < 3; ++k)
    for (int side = 0; side < 2; ++side) {
      const int u = (k + 1) % 3, v = (k + 2) % 3;
      std::array<int, 4> q{};
      const int uv[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
      for (int m = 0; m < 4; ++m) q[static_cast<std::size_t>(m)] = (side << k) | (uv[m][0] << u) | (uv[m][1] << v);
      if (side == 0) std::reverse(q.begin(), q.end());
      std::array<bool, 4> cross{};
      for (int m = 0; m < 4; ++m) cross[static_cast<std::size_t>(m)] = inside(q[static_cast<std::size_t>(m)]) != inside(q[static_cast<std::size_t>((m + 1) % 4)]);
      for (int m = 0; m < 4; ++m) {
        const auto a = static_cast<std::size_t>(m), b = static_cast<std::size_t>((m + 1) % 4);
        if (!cross[a] || inside(q[a])) continue;  // want outside -> inside
        int m2 = (m + 1) % 4;
        while (!cross[static_cast<std::size_t>(m2)]) m2 = (m2 + 1) % 4;
        const int from = E.id[static_cast<std::size_t>(q[a])][static_cast<std::size_t>(q[b])];
        const int to = E.id[static_cast<std::size_t>(q[static_cast<std::size_t>(m2)])][static_cast<std::size_t>(q[static_cast<std::size_t>((m2 + 1) % 4)])];
        next[static_cast<std::size_t>(from)] = to;
      }
    }
  std::vector<std::array<int, 3>> tris;
  std::array<bool, 12> used{};
  for (int start = 0; start < 12; ++start) {
    if (next[static_cast<std::size_t>(start)] < 0 || used[static_cast<std::size_t>(start)]) continue;
    std::vector<int> loop;
    for (int e = start; !used[static_cast<std::size_t>(e)]; e = next[static_cast<std::size_t>(e)]) {
      used[static_cast<std::size_t>(e)] = true;
      loop.push_back(e);
    }
    for (std::size_t i = 1; i + 1 < loop.size(); ++i) tris.push_back({loop[0], loop[i], loop[i + 1]});
  }
  return tris;
}

struct CaseTable {
  std::array<std::vector<std::array<int, 3>>, 256> cases;
  CaseTable() {
    for (int i = 0; i < 256; ++i) cases[static_cast<std::size_t>(i)] = build_case(i);
  }
};

const CaseTable& case_table() {
  static const CaseTable t;
  return t;
}

Vec3 clamp_to_cube(const Vec3& p) { return p.cwiseMax(Vec3::Constant(-0.5)).cwiseMin(Vec3::Constant(0.5)); }

// Field values cached on the integer lattice of the finest level (side n = 2^lod, with
// the doubled lattice used for cell centres).
class LatticeField {
 public:
  LatticeField(const SdfBatch& f, int lod) : f_(f), n2_(std::uint64_t{2} << lod) {}

  // Lattice coordinates in units of half a finest cell.
  std::uint64_t key(std::uint64_t x, std::uint64_t y, std::uint64_t z) const { return (x * (n2_ + 1) + y) * (n2_ + 1) + z; }
  Vec3 position(std::uint64_t k) const {
    const std::uint64_t z = k % (n2_ + 1), y = (k / (n2_ + 1)) % (n2_ + 1), x = k / ((n2_ + 1) * (n2_ + 1));
    return Vec3(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)) / static_cast<double>(n2_) -
           Vec3::Constant(0.5);
  }

  // Evaluates every key not yet cached, in sorted order.
  void fill(std::vector<std::uint64_t> keys) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<std::uint64_t> missing;
    for (auto k : keys)
      if (!cache_.count(k)) missing.push_back(k);
    if (missing.empty()) return;
    std::vector<Vec3> pts;
    pts.reserve(missing.size());
    for (auto k : missing) pts.push_back(position(k));
    const auto vals = f_(pts);
    if (vals.size() != pts.size()) throw ShapeError("field returned the wrong number of values");
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (!std::isfinite(vals[i])) throw DomainError("field is not finite at a sample point");
      cache_.emplace(missing[i], vals[i]);
    }
  }
  double at(std::uint64_t k) const { return cache_.at(k); }
  std::size_t size() const { return cache_.size(); }

 private:
  const SdfBatch& f_;
  std::uint64_t n2_;
  std::unordered_map<std::uint64_t, double> cache_;
};

struct Node {
  std::uint64_t x, y, z;  // cell index at its level
};

}  // namespace

std::array<int, 2> cube_edge(int edge) {
  if (edge < 0 || edge >= 12) throw UsageError("cube edge index outside [0, 12)");
  return edges().ends[static_cast<std::size_t>(edge)];
}

const std::vector<std::array<int, 3>>& marching_cubes_case(int index) {
  if (index < 0 || index >= 256) throw UsageError("marching cubes case outside [0, 256)");
  return case_table().cases[static_cast<std::size_t>(index)];
}

SdfBatch triplane_field(const nn::Mlp& decoder, const triplane::Triplane& z) {
  return [&decoder, &z](std::span<const Vec3> pts) {
    std::vector<Vec3> clamped(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) clamped[i] = clamp_to_cube(pts[i]);
    return triplane::decode_sdf_batch(decoder, z, clamped);
  };
}

geometry::TriangleMesh extract_surface(const SdfBatch& field, int lod, ExtractStats* stats) {
  if (lod < 2) throw UsageError("surface extraction needs lod >= 2");
  if (lod > 10) throw UsageError("surface extraction lod above 10 is not supported");
  LatticeField lat(field, lod);
  ExtractStats st;

  std::vector<Node> level{{0, 0, 0}};
  for (int depth = 0; depth <= lod && !level.empty(); ++depth) {
    st.nodes += level.size();
    const std::uint64_t span = std::uint64_t{2} << (lod - depth);  // cell size in half-cells
    auto corner = [&](const Node& n, int c) {
      return lat.key((n.x + (c & 1)) * span, (n.y + ((c >> 1) & 1)) * span, (n.z + ((c >> 2) & 1)) * span);
    };
    auto centre = [&](const Node& n) { return lat.key(n.x * span + span / 2, n.y * span + span / 2, n.z * span + span / 2); };

    std::vector<std::uint64_t> keys;
    keys.reserve(level.size() * 9);
    for (const auto& n : level) {
      for (int c = 0; c < 8; ++c) keys.push_back(corner(n, c));
      if (depth < lod) keys.push_back(centre(n));
    }
    lat.fill(std::move(keys));

    if (depth == lod) break;
    const double half_diag = std::sqrt(3.0) * 0.5 / static_cast<double>(std::uint64_t{1} << depth);
    std::vector<Node> children;
    for (const auto& n : level) {
      bool neg = false, pos = false;
      for (int c = 0; c < 8; ++c) (lat.at(corner(n, c)) < 0.0 ? neg : pos) = true;
      if (!(neg && pos) && std::fabs(lat.at(centre(n))) >= half_diag) continue;
      for (int c = 0; c < 8; ++c)
        children.push_back({2 * n.x + (c & 1), 2 * n.y + ((c >> 1) & 1), 2 * n.z + ((c >> 2) & 1)});
    }
    level = std::move(children);
  }
  std::sort(level.begin(), level.end(), [](const Node& a, const Node& b) {
    return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
  });

  // Polygonise leaves; vertices are keyed by the lattice edge they sit on.
  geometry::TriangleMesh mesh;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint32_t> vertex_of;
  const auto& E = edges();
  for (const auto& n : level) {
    std::array<std::uint64_t, 8> k{};
    std::array<double, 8> v{};
    int index = 0;
    for (int c = 0; c < 8; ++c) {
      k[static_cast<std::size_t>(c)] = lat.key((n.x + (c & 1)) * 2, (n.y + ((c >> 1) & 1)) * 2, (n.z + ((c >> 2) & 1)) * 2);
      v[static_cast<std::size_t>(c)] = lat.at(k[static_cast<std::size_t>(c)]);
      if (v[static_cast<std::size_t>(c)] < 0.0) index |= 1 << c;
    }
    const auto& tris = case_table().cases[static_cast<std::size_t>(index)];
    if (tris.empty()) continue;
    ++st.leaf_cells;
    auto vertex = [&](int e) {
      const auto [a, b] = E.ends[static_cast<std::size_t>(e)];
      const auto ka = k[static_cast<std::size_t>(a)], kb = k[static_cast<std::size_t>(b)];
      const auto [it, fresh] = vertex_of.try_emplace({ka, kb}, static_cast<std::uint32_t>(mesh.vertices.size()));
      if (fresh) {
        const double va = v[static_cast<std::size_t>(a)], vb = v[static_cast<std::size_t>(b)];
        const double t = va / (va - vb);
        const Vec3 pa = lat.position(ka), pb = lat.position(kb);
        mesh.vertices.push_back(pa + t * (pb - pa));
      }
      return it->second;
    };
    for (const auto& t : tris) mesh.faces.push_back({vertex(t[0]), vertex(t[1]), vertex(t[2])});
  }

  // Normals from central differences.
  if (!mesh.vertices.empty()) {
    std::vector<Vec3> probes;
    probes.reserve(6 * mesh.vertices.size());
    for (const auto& p : mesh.vertices)
      for (int axis = 0; axis < 3; ++axis)
        for (double s : {1.0, -1.0}) {
          Vec3 q = p;
          q[axis] += s * kNormalStep;
          probes.push_back(q);
        }
    const auto f = field(probes);
    if (f.size() != probes.size()) throw ShapeError("field returned the wrong number of values");
    st.evaluations += probes.size();
    mesh.normals.resize(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      Vec3 g;
      for (int axis = 0; axis < 3; ++axis) g[axis] = f[6 * i + 2 * axis] - f[6 * i + 2 * axis + 1];
      mesh.normals[i] = g.norm() > 0.0 ? Vec3(g.normalized()) : Vec3::Zero();
    }
  }
  st.evaluations += lat.size();
  if (stats) *stats = st;
  return mesh;
}

geometry::TriangleMesh extract_surface(const nn::Mlp& decoder, const triplane::Triplane& z, int lod) {
  return extract_surface(triplane_field(decoder, z), lod);
}

double signed_volume(const geometry::TriangleMesh& mesh) {
  double v = 0.0;
  for (const auto& f : mesh.faces)
    v += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  return v / 6.0;
}

}  // namespace omnishape::surface
