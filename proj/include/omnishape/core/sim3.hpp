#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace omnishape {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Similarity transform x -> scale * rotation * x + translation.
struct Sim3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  Vec3 apply_inverse(const Vec3& y) const { return rotation.transpose() * (y - translation) / scale; }

  Sim3 inverse() const {
    Sim3 inv;
    inv.rotation = rotation.transpose();
    inv.scale = 1.0 / scale;
    inv.translation = -(inv.rotation * translation) * inv.scale;
    return inv;
  }

  // (*this) after `rhs`: x -> this(rhs(x)).
  Sim3 operator*(const Sim3& rhs) const {
    Sim3 out;
    out.rotation = rotation * rhs.rotation;
    out.scale = scale * rhs.scale;
    out.translation = scale * (rotation * rhs.translation) + translation;
    return out;
  }
};

// Geodesic angle between two rotations, radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 r = a.transpose() * b;
  const Vec3 skew(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  return std::atan2(0.5 * skew.norm(), 0.5 * (r.trace() - 1.0));
}

}  // namespace omnishape
