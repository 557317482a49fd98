#include "omnishape/geometry/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::geometry {
namespace {

struct PixelSample {
  bool hit = false;
  Vec3 norf, norf_normal, world_normal;
  double depth = 0.0;
};

PixelSample trace_pixel(const Shape& shape, const Camera& cam, int u, int v) {
  const Vec3 o_world = cam.center();
  const Vec3 d_world = cam.ray_direction(u, v);
  const Sim3& w = shape.to_world;
  // The NORF-frame ray keeps the parameterisation: t is still camera depth.
  const Vec3 o = w.apply_inverse(o_world);
  const Vec3 d = w.rotation.transpose() * d_world / w.scale;
  const auto hit = intersect(shape, o, d);
  PixelSample s;
  if (!hit) return s;
  s.hit = true;
  s.norf = hit->point;
  s.norf_normal = hit->normal.normalized();
  s.world_normal = w.rotation * s.norf_normal;
  s.depth = cam.to_camera(w.apply(hit->point)).z();
  return s;
}

void store(NorfMap& m, int u, int v, const PixelSample& s) {
  const std::size_t i = m.pixel(u, v);
  if (!s.hit) return;
  m.mask[i] = 1;
  for (int k = 0; k < 3; ++k) {
    m.coords[3 * i + k] = std::clamp(s.norf[k], -0.5, 0.5);
    m.normals[3 * i + k] = s.norf_normal[k];
  }
  m.depth[i] = s.depth;
}

void write_planes(const std::filesystem::path& base, const nlohmann::json& header,
                  const std::vector<const std::vector<double>*>& planes, int d, const std::vector<int>& widths) {
  io::write_file(std::filesystem::path(base.string() + ".json"), dump_json(header));
  io::ByteWriter w;
  const std::size_t n = static_cast<std::size_t>(d) * d;
  for (std::size_t p = 0; p < planes.size(); ++p)
    for (int c = 0; c < widths[p]; ++c) {
      std::vector<double> plane(n);
      for (std::size_t i = 0; i < n; ++i) plane[i] = (*planes[p])[i * widths[p] + c];
      w.f32_array(plane);
    }
  w.save(std::filesystem::path(base.string() + ".bin"));
}

nlohmann::json read_header(const std::filesystem::path& base, const std::string& format) {
  const auto bytes = io::read_file(std::filesystem::path(base.string() + ".json"));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed sidecar " + base.string() + ".json: " + e.what());
  }
  if (j.value("format", "") != format) throw ValidationError(base.string() + ".json is not a " + format + " sidecar");
  return j;
}

std::vector<std::vector<double>> read_planes(const std::filesystem::path& base, std::size_t channels, int d) {
  auto r = io::ByteReader::open(std::filesystem::path(base.string() + ".bin"));
  const std::size_t n = static_cast<std::size_t>(d) * d;
  if (r.remaining() != channels * n * 4) throw ValidationError("size of " + base.string() + ".bin does not match its sidecar");
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < channels; ++c) out.push_back(r.f32_array(n));
  return out;
}

// Source pixel that lands on (u, v) after rotating the image by `angle` about its centre.
bool rotated_source(int d, int u, int v, double angle, int& su, int& sv) {
  const double c = 0.5 * d, x = u + 0.5 - c, y = v + 0.5 - c;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double sx = ca * x + sa * y + c, sy = -sa * x + ca * y + c;
  su = static_cast<int>(std::floor(sx));
  sv = static_cast<int>(std::floor(sy));
  return su >= 0 && sv >= 0 && su < d && sv < d;
}

}  // namespace

NorfMap::NorfMap(int d)
    : size(d),
      coords(static_cast<std::size_t>(d) * d * 3, kNorfSentinel),
      normals(static_cast<std::size_t>(d) * d * 3, 0.0),
      mask(static_cast<std::size_t>(d) * d, 0),
      depth(static_cast<std::size_t>(d) * d, 0.0) {}

std::size_t NorfMap::hit_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

void NorfMap::validate() const {
  const std::size_t n = static_cast<std::size_t>(size) * size;
  if (size <= 0 || coords.size() != 3 * n || normals.size() != 3 * n || mask.size() != n || depth.size() != n)
    throw ValidationError("NORF map arrays do not match its size");
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 x(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]);
    const Vec3 nn(normals[3 * i], normals[3 * i + 1], normals[3 * i + 2]);
    if (mask[i]) {
      if (!(x.cwiseAbs().maxCoeff() <= 0.5)) throw ValidationError("NORF coordinate outside the unit cube");
      if (!(std::fabs(nn.norm() - 1.0) <= 1e-4)) throw ValidationError("NORF normal is not unit length");
    } else if (x != Vec3::Constant(kNorfSentinel)) {
      throw ValidationError("background NORF pixel without the sentinel");
    }
  }
}

Observation::Observation(int d)
    : size(d),
      image(static_cast<std::size_t>(d) * d, 0.0),
      normals(static_cast<std::size_t>(d) * d * 3, 0.0),
      mask(static_cast<std::size_t>(d) * d, 0) {}

void Observation::validate() const {
  const std::size_t n = static_cast<std::size_t>(size) * size;
  if (size <= 0 || image.size() != n || normals.size() != 3 * n || mask.size() != n)
    throw ValidationError("observation arrays do not match its size");
  for (double v : image)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("observation intensity outside [0, 1]");
}

NorfMap render_norf(const Shape& shape, const Camera& cam) {
  cam.validate();
  NorfMap m(cam.size);
  m.camera = cam;
  const int d = cam.size;
#pragma omp parallel for schedule(dynamic, 1)
  for (int v = 0; v < d; ++v)
    for (int u = 0; u < d; ++u) store(m, u, v, trace_pixel(shape, cam, u, v));
  return m;
}

NorfMap render_norf_serial(const Shape& shape, const Camera& cam) {
  cam.validate();
  NorfMap m(cam.size);
  m.camera = cam;
  for (int v = 0; v < cam.size; ++v)
    for (int u = 0; u < cam.size; ++u) store(m, u, v, trace_pixel(shape, cam, u, v));
  return m;
}

double shade(const Vec3& normal, const Vec3& light_dir) {
  return std::clamp(kAmbient + (1.0 - kAmbient) * std::max(0.0, normal.dot(light_dir.normalized())), 0.0, 1.0);
}

Observation render_observation(const Shape& shape, const Camera& cam, const Vec3& light_dir) {
  cam.validate();
  Observation o(cam.size);
  const int d = cam.size;
#pragma omp parallel for schedule(dynamic, 1)
  for (int v = 0; v < d; ++v)
    for (int u = 0; u < d; ++u) {
      const PixelSample s = trace_pixel(shape, cam, u, v);
      if (!s.hit) continue;
      const std::size_t i = static_cast<std::size_t>(v) * d + u;
      o.mask[i] = 1;
      o.image[i] = shade(s.world_normal, light_dir);
      const Vec3 n = cam.rotation * s.world_normal;
      for (int k = 0; k < 3; ++k) o.normals[3 * i + k] = n[k];
    }
  return o;
}

Observation downscale_upscale(const Observation& obs) {
  const int d = obs.size;
  Observation out(d);
  for (int v = 0; v < d; ++v)
    for (int u = 0; u < d; ++u) {
      const int bu = u & ~1, bv = v & ~1;
      double img = 0, cnt = 0, hits = 0;
      Vec3 n = Vec3::Zero();
      for (int dv = 0; dv < 2; ++dv)
        for (int du = 0; du < 2; ++du) {
          const int uu = bu + du, vv = bv + dv;
          if (uu >= d || vv >= d) continue;
          const std::size_t j = static_cast<std::size_t>(vv) * d + uu;
          img += obs.image[j];
          n += Vec3(obs.normals[3 * j], obs.normals[3 * j + 1], obs.normals[3 * j + 2]);
          hits += obs.mask[j];
          cnt += 1;
        }
      const std::size_t i = static_cast<std::size_t>(v) * d + u;
      out.image[i] = img / cnt;
      out.mask[i] = hits * 2 >= cnt ? 1 : 0;
      if (n.norm() > 1e-12 && out.mask[i]) n.normalize();
      else n.setZero();
      for (int k = 0; k < 3; ++k) out.normals[3 * i + k] = n[k];
    }
  return out;
}

Observation rotate_observation(const Observation& obs, double angle) {
  const int d = obs.size;
  Observation out(d);
  // Image rotation by +angle (clockwise on screen with y down) is a camera roll; camera
  // frame vectors turn about the optical axis by the same angle.
  const Mat3 turn = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
  for (int v = 0; v < d; ++v)
    for (int u = 0; u < d; ++u) {
      int su, sv;
      if (!rotated_source(d, u, v, angle, su, sv)) continue;
      const std::size_t i = static_cast<std::size_t>(v) * d + u, j = static_cast<std::size_t>(sv) * d + su;
      out.image[i] = obs.image[j];
      out.mask[i] = obs.mask[j];
      const Vec3 n = turn * Vec3(obs.normals[3 * j], obs.normals[3 * j + 1], obs.normals[3 * j + 2]);
      for (int k = 0; k < 3; ++k) out.normals[3 * i + k] = n[k];
    }
  return out;
}

NorfMap rotate_norf(const NorfMap& m, double angle) {
  const int d = m.size;
  NorfMap out(d);
  out.camera = m.camera;
  const Mat3 turn = Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix();
  out.camera.rotation = turn * m.camera.rotation;
  out.camera.translation = turn * m.camera.translation;
  for (int v = 0; v < d; ++v)
    for (int u = 0; u < d; ++u) {
      int su, sv;
      if (!rotated_source(d, u, v, angle, su, sv)) continue;
      const std::size_t i = out.pixel(u, v), j = m.pixel(su, sv);
      out.mask[i] = m.mask[j];
      out.depth[i] = m.depth[j];
      for (int k = 0; k < 3; ++k) {
        out.coords[3 * i + k] = m.coords[3 * j + k];
        out.normals[3 * i + k] = m.normals[3 * j + k];
      }
    }
  return out;
}

void augment_pair(Observation& obs, NorfMap& norf, const AugmentConfig& cfg, Rng& rng) {
  if (rng.bernoulli(cfg.downscale_prob)) obs = downscale_upscale(obs);
  if (rng.bernoulli(cfg.rotate_prob)) {
    const double angle = rng.uniform(-cfg.max_rotation, cfg.max_rotation);
    obs = rotate_observation(obs, angle);
    norf = rotate_norf(norf, angle);
  }
}

void save_norf_map(const std::filesystem::path& base, const NorfMap& m) {
  m.validate();
  nlohmann::json h = {{"format", "norf_map"},
                      {"d", m.size},
                      {"channels", {"x", "y", "z", "nx", "ny", "nz", "mask", "depth"}},
                      {"sentinel", kNorfSentinel},
                      {"camera", camera_to_json(m.camera)}};
  std::vector<double> mask(m.mask.begin(), m.mask.end());
  write_planes(base, h, {&m.coords, &m.normals, &mask, &m.depth}, m.size, {3, 3, 1, 1});
}

NorfMap load_norf_map(const std::filesystem::path& base) {
  const auto h = read_header(base, "norf_map");
  const int d = h.at("d").get<int>();
  if (d <= 0 || d > 4096) throw ValidationError("implausible NORF map size");
  const auto planes = read_planes(base, 8, d);
  NorfMap m(d);
  m.camera = camera_from_json(h.at("camera"));
  const std::size_t n = static_cast<std::size_t>(d) * d;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) {
      m.coords[3 * i + k] = planes[k][i];
      m.normals[3 * i + k] = planes[3 + k][i];
    }
    m.mask[i] = planes[6][i] > 0.5 ? 1 : 0;
    m.depth[i] = planes[7][i];
  }
  m.validate();
  return m;
}

void save_observation(const std::filesystem::path& base, const Observation& o) {
  o.validate();
  nlohmann::json h = {{"format", "observation"}, {"d", o.size}, {"channels", {"intensity", "nx", "ny", "nz", "mask"}}, {"sentinel", 0.0}};
  std::vector<double> mask(o.mask.begin(), o.mask.end());
  write_planes(base, h, {&o.image, &o.normals, &mask}, o.size, {1, 3, 1});
}

Observation load_observation(const std::filesystem::path& base) {
  const auto h = read_header(base, "observation");
  const int d = h.at("d").get<int>();
  if (d <= 0 || d > 4096) throw ValidationError("implausible observation size");
  const auto planes = read_planes(base, 5, d);
  Observation o(d);
  const std::size_t n = static_cast<std::size_t>(d) * d;
  for (std::size_t i = 0; i < n; ++i) {
    o.image[i] = planes[0][i];
    for (int k = 0; k < 3; ++k) o.normals[3 * i + k] = planes[1 + k][i];
    o.mask[i] = planes[4][i] > 0.5 ? 1 : 0;
  }
  o.validate();
  return o;
}

}  // namespace omnishape::geometry
