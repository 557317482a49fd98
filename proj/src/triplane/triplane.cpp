#include "omnishape/triplane/triplane.hpp"

#include <algorithm>
#include <cmath>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/triplane/sdf_samples.hpp"

namespace omnishape::triplane {
namespace {

struct Bilinear {
  std::size_t i0, i1, j0, j1;
  double w00, w10, w01, w11;
};

Bilinear bilinear(double a, double b, std::size_t r) {
  const double gu = grid_coordinate(a, r), gv = grid_coordinate(b, r);
  const std::size_t top = r > 1 ? r - 2 : 0;
  const std::size_t i0 = std::min(static_cast<std::size_t>(gu), top);
  const std::size_t j0 = std::min(static_cast<std::size_t>(gv), top);
  const std::size_t i1 = std::min(i0 + 1, r - 1), j1 = std::min(j0 + 1, r - 1);
  const double fu = gu - static_cast<double>(i0), fv = gv - static_cast<double>(j0);
  return {i0, i1, j0, j1, (1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv};
}

void require_in_cube(const Vec3& p) {
  if (!(std::fabs(p.x()) <= 0.5 && std::fabs(p.y()) <= 0.5 && std::fabs(p.z()) <= 0.5))
    throw DomainError("point outside the unit cube");
}

}  // namespace

void SdfSampleSet::validate() const {
  if (points.size() != distances.size()) throw ValidationError("SDF sample set: point/distance count mismatch");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].cwiseAbs().maxCoeff() <= 0.5)) throw ValidationError("SDF sample outside the unit cube");
    if (!std::isfinite(distances[i])) throw ValidationError("non-finite SDF sample");
  }
}

Triplane::Triplane(int lod_, std::size_t latent_dim_, double fill) : lod(lod_), latent_dim(latent_dim_) {
  if (lod < 0 || lod > 12 || latent_dim == 0) throw UsageError("triplane needs 0 <= lod <= 12 and latent_dim > 0");
  for (auto& p : planes) p.assign(plane_size(), fill);
}

void Triplane::validate() const {
  if (lod < 0 || lod > 12 || latent_dim == 0) throw ValidationError("triplane lod/latent_dim out of range");
  for (const auto& p : planes) {
    if (p.size() != plane_size()) throw ValidationError("triplane plane size mismatch");
    for (double v : p)
      if (!std::isfinite(v)) throw ValidationError("non-finite triplane value");
  }
}

std::array<double, 2> project_to_plane(PlaneAxis k, const Vec3& p) {
  switch (k) {
    case PlaneAxis::XY: return {p.x(), p.y()};
    case PlaneAxis::XZ: return {p.x(), p.z()};
    case PlaneAxis::YZ: return {p.y(), p.z()};
  }
  return {0.0, 0.0};
}

double grid_coordinate(double coord, std::size_t r) {
  const double g = (coord + 0.5) * static_cast<double>(r) - 0.5;
  return std::clamp(g, 0.0, static_cast<double>(r - 1));
}

std::vector<double> interpolate(const Triplane& z, const Vec3& point) {
  require_in_cube(point);
  const std::size_t n = z.latent_dim, r = z.resolution();
  std::vector<double> out(3 * n, 0.0);
  for (int k = 0; k < 3; ++k) {
    const auto [a, b] = project_to_plane(static_cast<PlaneAxis>(k), point);
    const Bilinear w = bilinear(a, b, r);
    const double* base = z.planes[k].data();
    for (std::size_t c = 0; c < n; ++c) {
      out[k * n + c] = w.w00 * base[(w.i0 * r + w.j0) * n + c] + w.w10 * base[(w.i1 * r + w.j0) * n + c] +
                       w.w01 * base[(w.i0 * r + w.j1) * n + c] + w.w11 * base[(w.i1 * r + w.j1) * n + c];
    }
  }
  return out;
}

double total_variation(const Triplane& z) {
  const std::size_t n = z.latent_dim, r = z.resolution();
  double tv = 0.0;
  for (const auto& plane : z.planes) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j)
        for (std::size_t c = 0; c < n; ++c) {
          const double v = plane[(i * r + j) * n + c];
          if (i + 1 < r) tv += std::fabs(plane[((i + 1) * r + j) * n + c] - v);
          if (j + 1 < r) tv += std::fabs(plane[(i * r + j + 1) * n + c] - v);
        }
  }
  return tv;
}

nn::Tensor to_image_layout(const Triplane& z) {
  const std::size_t n = z.latent_dim, r = z.resolution();
  nn::Tensor out({r, r, 3 * n});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (int k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < n; ++c) out[(i * r + j) * 3 * n + k * n + c] = z.planes[k][(i * r + j) * n + c];
  return out;
}

Triplane from_image_layout(const nn::Tensor& image, std::size_t latent_dim) {
  if (image.rank() != 3 || image.dim(0) != image.dim(1) || image.dim(2) != 3 * latent_dim)
    throw ShapeError("image layout " + nn::shape_string(image.shape()) + " is not [R, R, 3n]");
  const std::size_t r = image.dim(0);
  int lod = 0;
  while ((std::size_t{1} << lod) < r) ++lod;
  if ((std::size_t{1} << lod) != r) throw ShapeError("triplane resolution must be a power of two");
  Triplane z(lod, latent_dim);
  const std::size_t n = latent_dim;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (int k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < n; ++c) z.planes[k][(i * r + j) * n + c] = image[(i * r + j) * 3 * n + k * n + c];
  return z;
}

std::vector<double> channel_std(std::span<const Triplane> library) {
  if (library.empty()) throw UsageError("channel_std of an empty library");
  const std::size_t n = library.front().latent_dim, r = library.front().resolution();
  std::vector<double> sum(3 * n, 0.0), sum_sq(3 * n, 0.0);
  double count = 0.0;
  for (const auto& z : library) {
    if (z.latent_dim != n || z.resolution() != r) throw ShapeError("library triplanes differ in shape");
    for (int k = 0; k < 3; ++k)
      for (std::size_t cell = 0; cell < r * r; ++cell)
        for (std::size_t c = 0; c < n; ++c) {
          const double v = z.planes[k][cell * n + c];
          sum[k * n + c] += v;
          sum_sq[k * n + c] += v * v;
        }
    count += static_cast<double>(r * r);
  }
  std::vector<double> out(3 * n);
  for (std::size_t ch = 0; ch < 3 * n; ++ch) {
    const double mean = sum[ch] / count;
    out[ch] = std::sqrt(std::max(0.0, sum_sq[ch] / count - mean * mean));
  }
  return out;
}

namespace {
double channel_factor(double ref) { return ref < kMinRefStd ? 1.0 : kTargetStd / ref; }

Triplane rescale(const Triplane& z, std::span<const double> ref_std, bool forward) {
  const std::size_t n = z.latent_dim;
  if (ref_std.size() != 3 * n) throw ShapeError("ref_std needs 3n entries");
  Triplane out = z;
  for (int k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < out.planes[k].size(); ++i) {
      const double f = channel_factor(ref_std[k * n + i % n]);
      double& v = out.planes[k][i];
      v = forward ? std::clamp(v * f, -1.0, 1.0) : v / f;
    }
  return out;
}
}  // namespace

Triplane normalize_triplane(const Triplane& z, std::span<const double> ref_std) { return rescale(z, ref_std, true); }
Triplane denormalize_triplane(const Triplane& z, std::span<const double> ref_std) { return rescale(z, ref_std, false); }

void save_triplane(const std::filesystem::path& path, const Triplane& z, std::span<const double> ref_std) {
  if (ref_std.size() != 3 * z.latent_dim) throw ShapeError("ref_std needs 3n entries");
  io::ByteWriter w;
  w.magic("TPL1");
  w.u32(static_cast<std::uint32_t>(z.lod));
  w.u32(static_cast<std::uint32_t>(z.latent_dim));
  w.f32_array(ref_std);
  for (const auto& p : z.planes) w.f32_array(p);
  w.save(path);
}

LoadedTriplane load_triplane(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("TPL1");
  const int lod = static_cast<int>(r.u32());
  const std::size_t n = r.u32();
  if (lod > 12 || n == 0 || n > 4096) throw ValidationError("implausible triplane header in " + path.string());
  LoadedTriplane out;
  out.ref_std = r.f32_array(3 * n);
  out.triplane = Triplane(lod, n);
  for (auto& p : out.triplane.planes) p = r.f32_array(out.triplane.plane_size());
  if (!r.at_end()) throw ValidationError("trailing bytes in " + path.string());
  out.triplane.validate();
  for (double s : out.ref_std)
    if (!(s >= 0.0)) throw ValidationError("negative ref_std in " + path.string());
  return out;
}

nn::Var gather_features(const nn::Var& planes, std::span<const Vec3> points, std::span<const std::size_t> object_index) {
  const auto& s = planes.shape();
  if (s.size() != 5 || s[1] != 3 || s[2] != s[3]) throw ShapeError("planes must be [O, 3, R, R, n]");
  if (points.size() != object_index.size()) throw ShapeError("gather_features: points/object_index mismatch");
  const std::size_t objects = s[0], r = s[2], n = s[4], batch = points.size();
  const std::size_t plane_stride = r * r * n, object_stride = 3 * plane_stride;

  // Precomputed (source offset, weight) pairs per output element group, reused by backward.
  struct Tap {
    std::size_t offset[4];
    double weight[4];
  };
  std::vector<Tap> taps(batch * 3);
  for (std::size_t b = 0; b < batch; ++b) {
    require_in_cube(points[b]);
    if (object_index[b] >= objects) throw ShapeError("gather_features: object index out of range");
    for (int k = 0; k < 3; ++k) {
      const auto [u, v] = project_to_plane(static_cast<PlaneAxis>(k), points[b]);
      const Bilinear w = bilinear(u, v, r);
      const std::size_t base = object_index[b] * object_stride + k * plane_stride;
      taps[b * 3 + k] = Tap{{base + (w.i0 * r + w.j0) * n, base + (w.i1 * r + w.j0) * n, base + (w.i0 * r + w.j1) * n,
                             base + (w.i1 * r + w.j1) * n},
                            {w.w00, w.w10, w.w01, w.w11}};
    }
  }
  nn::Tensor out({batch, 3 * n});
  const double* src = planes.value().ptr();
  for (std::size_t t = 0; t < taps.size(); ++t) {
    double* dst = out.ptr() + t * n;
    const Tap& tap = taps[t];
    for (std::size_t c = 0; c < n; ++c)
      dst[c] = tap.weight[0] * src[tap.offset[0] + c] + tap.weight[1] * src[tap.offset[1] + c] +
               tap.weight[2] * src[tap.offset[2] + c] + tap.weight[3] * src[tap.offset[3] + c];
  }
  return nn::make_op(std::move(out), {planes}, [taps = std::move(taps), n](nn::Node& self) {
    nn::Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    double* g = in.grad_buffer().ptr();
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const double* gy = self.grad.ptr() + t * n;
      for (int q = 0; q < 4; ++q) {
        const double w = taps[t].weight[q];
        if (w == 0.0) continue;
        double* dst = g + taps[t].offset[q];
        for (std::size_t c = 0; c < n; ++c) dst[c] += w * gy[c];
      }
    }
  });
}

nn::Var total_variation(const nn::Var& planes) {
  const auto& s = planes.shape();
  if (s.size() != 5 || s[1] != 3 || s[2] != s[3]) throw ShapeError("planes must be [O, 3, R, R, n]");
  const std::size_t count = s[0] * 3, r = s[2], n = s[4];
  const double* v = planes.value().ptr();
  double tv = 0.0;
  auto visit = [count, r, n](auto&& fn) {
    for (std::size_t p = 0; p < count; ++p) {
      const std::size_t base = p * r * r * n;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < r; ++j)
          for (std::size_t c = 0; c < n; ++c) {
            const std::size_t here = base + (i * r + j) * n + c;
            if (i + 1 < r) fn(here, here + r * n);
            if (j + 1 < r) fn(here, here + n);
          }
    }
  };
  visit([&](std::size_t a, std::size_t b) { tv += std::fabs(v[b] - v[a]); });
  return nn::make_op(nn::Tensor::scalar(tv), {planes}, [visit](nn::Node& self) {
    nn::Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const double* val = in.value.ptr();
    double* g = in.grad_buffer().ptr();
    const double gy = self.grad[0];
    visit([&](std::size_t a, std::size_t b) {
      const double d = val[b] - val[a];
      const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      g[b] += gy * sg;
      g[a] -= gy * sg;
    });
  });
}

nn::Tensor stack_planes(std::span<const Triplane> library) {
  if (library.empty()) throw UsageError("stack_planes of an empty library");
  const std::size_t r = library.front().resolution(), n = library.front().latent_dim;
  nn::Tensor out({library.size(), 3, r, r, n});
  std::size_t k = 0;
  for (const auto& z : library) {
    if (z.resolution() != r || z.latent_dim != n) throw ShapeError("library triplanes differ in shape");
    for (const auto& p : z.planes)
      for (double v : p) out[k++] = v;
  }
  return out;
}

Triplane unstack_plane(const nn::Tensor& planes, std::size_t object) {
  const auto& s = planes.shape();
  const std::size_t r = s[2], n = s[4];
  int lod = 0;
  while ((std::size_t{1} << lod) < r) ++lod;
  Triplane z(lod, n);
  const std::size_t ps = z.plane_size();
  for (int k = 0; k < 3; ++k) std::copy_n(planes.ptr() + (object * 3 + k) * ps, ps, z.planes[k].begin());
  return z;
}

}  // namespace omnishape::triplane
