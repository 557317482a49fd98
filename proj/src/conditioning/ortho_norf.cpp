#include "omnishape/conditioning/ortho_norf.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"

namespace omnishape::conditioning {

FilteredPoints filter_points(const geometry::NorfMap& m, const FilterConfig& cfg) {
  FilteredPoints out;
  const std::size_t n = m.mask.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.mask[i]) continue;
    const Vec3 x(m.coords[3 * i], m.coords[3 * i + 1], m.coords[3 * i + 2]);
    Vec3 nrm(m.normals[3 * i], m.normals[3 * i + 1], m.normals[3 * i + 2]);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.range) {
      ++out.dropped_range;
      continue;
    }
    const double len = nrm.norm();
    nrm = len > 1e-12 && std::isfinite(len) ? Vec3(nrm / len) : Vec3::Zero();
    out.points.push_back(x.cwiseMax(-0.5).cwiseMin(0.5));
    out.normals.push_back(nrm);
    out.pixels.push_back(i);
  }

  const std::size_t count = out.points.size();
  const std::size_t k = std::min(cfg.neighbours, count > 0 ? count - 1 : 0);
  if (k > 0) {
    std::vector<double> score(count);
    std::vector<double> dist(count);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t j = 0; j < count; ++j) dist[j] = (out.points[i] - out.points[j]).norm();
      dist[i] = std::numeric_limits<double>::infinity();
      std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
      double s = 0.0;
      for (std::size_t q = 0; q < k; ++q) s += dist[q];
      score[i] = s / static_cast<double>(k);
    }
    std::vector<double> sorted = score;
    std::nth_element(sorted.begin(), sorted.begin() + count / 2, sorted.end());
    const double limit = cfg.outlier_factor * sorted[count / 2];
    FilteredPoints kept;
    kept.dropped_range = out.dropped_range;
    for (std::size_t i = 0; i < count; ++i) {
      if (score[i] > limit) {
        ++kept.dropped_outliers;
        continue;
      }
      kept.points.push_back(out.points[i]);
      kept.normals.push_back(out.normals[i]);
      kept.pixels.push_back(out.pixels[i]);
    }
    out = std::move(kept);
  }
  if (out.points.size() < cfg.min_points)
    throw InsufficientEvidenceError("only " + std::to_string(out.points.size()) + " NORF points survive filtering");
  return out;
}

std::size_t voxel_cell(double coord, std::size_t side) {
  const double c = std::floor((coord + 0.5) * static_cast<double>(side));
  return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(side - 1)));
}

VoxelGrid::VoxelGrid(int lod_) : lod(lod_), side(std::size_t{2} << lod_) {
  occupancy.assign(side * side * side, 0);
  mean_normal.assign(side * side * side * 3, 0.0);
}

std::size_t VoxelGrid::occupied_count() const {
  return static_cast<std::size_t>(std::count(occupancy.begin(), occupancy.end(), 1));
}

VoxelGrid voxelize(const std::vector<Vec3>& points, const std::vector<Vec3>& normals, int lod) {
  if (points.size() != normals.size()) throw ShapeError("voxelize: point/normal count mismatch");
  if (lod < 0 || lod > 8) throw UsageError("voxelize: lod out of range");
  VoxelGrid g(lod);
  std::vector<std::uint32_t> members(g.occupancy.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::size_t idx =
        g.index(voxel_cell(points[i].x(), g.side), voxel_cell(points[i].y(), g.side), voxel_cell(points[i].z(), g.side));
    g.occupancy[idx] = 1;
    ++members[idx];
    for (int c = 0; c < 3; ++c) g.mean_normal[3 * idx + c] += normals[i][c];
  }
  for (std::size_t idx = 0; idx < members.size(); ++idx)
    if (members[idx] > 1)
      for (int c = 0; c < 3; ++c) g.mean_normal[3 * idx + c] /= members[idx];
  return g;
}

OrthoPlanes::OrthoPlanes(std::size_t s) : side(s) {
  for (auto& p : planes) p.assign(side * side * 4, 0.0);
}

OrthoPlanes ortho_project(const VoxelGrid& g) {
  const std::size_t s = g.side;
  OrthoPlanes out(s);
  std::array<std::vector<std::uint32_t>, 3> count;
  for (auto& c : count) c.assign(s * s, 0);
  for (std::size_t x = 0; x < s; ++x)
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t z = 0; z < s; ++z) {
        const std::size_t idx = g.index(x, y, z);
        if (!g.occupancy[idx]) continue;
        const std::array<std::array<std::size_t, 2>, 3> pix = {{{x, y}, {x, z}, {y, z}}};
        for (int p = 0; p < 3; ++p) {
          const auto [a, b] = pix[p];
          ++count[p][a * s + b];
          for (int c = 0; c < 3; ++c) out.at(p, a, b, 1 + c) += g.mean_normal[3 * idx + c];
        }
      }
  for (int p = 0; p < 3; ++p)
    for (std::size_t cell = 0; cell < s * s; ++cell) {
      const auto n = count[p][cell];
      if (n == 0) continue;
      out.planes[p][cell * 4] = 1.0;
      for (int c = 1; c < 4; ++c) out.planes[p][cell * 4 + c] /= n;
    }
  return out;
}

nn::Tensor pixel_unshuffle(const OrthoPlanes& planes, std::size_t f) {
  if (f == 0 || planes.side % f != 0)
    throw ShapeError("pixel_unshuffle: side " + std::to_string(planes.side) + " not divisible by " + std::to_string(f));
  const std::size_t r = planes.side / f, channels = 3 * 4 * f * f;
  nn::Tensor out({r, r, channels});
  for (int p = 0; p < 3; ++p)
    for (std::size_t a = 0; a < planes.side; ++a)
      for (std::size_t b = 0; b < planes.side; ++b)
        for (int c = 0; c < 4; ++c) {
          const std::size_t ch = p * 4 * f * f + c * f * f + (a % f) * f + (b % f);
          out[((a / f) * r + b / f) * channels + ch] = planes.at(p, a, b, c);
        }
  return out;
}

OrthoPlanes pixel_shuffle(const nn::Tensor& ortho, std::size_t f) {
  if (ortho.rank() != 3 || ortho.dim(0) != ortho.dim(1) || f == 0 || ortho.dim(2) != 3 * 4 * f * f)
    throw ShapeError("pixel_shuffle: expected [R, R, " + std::to_string(12 * f * f) + "], got " + nn::shape_string(ortho.shape()));
  const std::size_t r = ortho.dim(0), channels = ortho.dim(2);
  OrthoPlanes out(r * f);
  for (int p = 0; p < 3; ++p)
    for (std::size_t a = 0; a < out.side; ++a)
      for (std::size_t b = 0; b < out.side; ++b)
        for (int c = 0; c < 4; ++c) {
          const std::size_t ch = p * 4 * f * f + c * f * f + (a % f) * f + (b % f);
          out.at(p, a, b, c) = ortho[((a / f) * r + b / f) * channels + ch];
        }
  return out;
}

nn::Tensor ortho_norf(const geometry::NorfMap& m, int lod, const FilterConfig& cfg) {
  const auto pts = filter_points(m, cfg);
  return pixel_unshuffle(ortho_project(voxelize(pts.points, pts.normals, lod)));
}

void save_ortho_norf(const std::filesystem::path& path, const nn::Tensor& ortho) {
  if (ortho.rank() != 3 || ortho.dim(0) != ortho.dim(1) || ortho.dim(2) != kOrthoChannels)
    throw ShapeError("Ortho-NORF must be [R, R, 48]");
  const std::string header = nlohmann::json{{"shape", ortho.shape()}}.dump();
  io::ByteWriter w;
  w.magic("ONF1");
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.f32_array(ortho.data());
  w.save(path);
}

nn::Tensor load_ortho_norf(const std::filesystem::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("ONF1");
  const std::size_t len = r.u32();
  if (len > r.remaining()) throw ValidationError("truncated Ortho-NORF header in " + path.string());
  nn::Shape shape;
  try {
    shape = nlohmann::json::parse(r.bytes(len)).at("shape").get<nn::Shape>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed Ortho-NORF header in " + path.string() + ": " + e.what());
  }
  if (shape.size() != 3 || shape[0] != shape[1] || shape[2] != kOrthoChannels || shape[0] == 0 || shape[0] > 4096)
    throw ValidationError("Ortho-NORF header shape is not [R, R, 48]");
  nn::Tensor out(shape, r.f32_array(nn::shape_size(shape)));
  if (!r.at_end()) throw ValidationError("trailing bytes in " + path.string());
  return out;
}

}  // namespace omnishape::conditioning
