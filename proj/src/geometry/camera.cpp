#include "omnishape/geometry/camera.hpp"

#include <cmath>

#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::geometry {

Vec3 Camera::ray_direction(int u, int v) const {
  const Vec3 d((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0);
  return rotation.transpose() * d;
}

Vec3 Camera::back_project(int u, int v, double depth) const {
  return Vec3((u + 0.5 - cx) / fx * depth, (v + 0.5 - cy) / fy * depth, depth);
}

void Camera::validate() const {
  if (!(fx > 0 && fy > 0)) throw ValidationError("camera focal lengths must be positive");
  if (size <= 0) throw ValidationError("camera resolution must be positive");
  if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || rotation.determinant() < 0)
    throw ValidationError("camera rotation is not a proper rotation");
  if (!translation.allFinite()) throw ValidationError("camera translation is not finite");
}

Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int size) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = (-up).cross(z);
  if (x.norm() < 1e-12) throw DegeneracyError("look_at: up is parallel to the viewing direction");
  x.normalize();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = cam.fy = focal;
  cam.cx = cam.cy = 0.5 * size;
  cam.size = size;
  return cam;
}

Camera orbit_camera(const Vec3& target, double distance, double azimuth, double elevation, double focal, int size) {
  // Azimuth 0 looks along -z from the +z side; positive elevation looks down from above.
  const Vec3 offset(distance * std::cos(elevation) * std::sin(azimuth), distance * std::sin(elevation),
                    distance * std::cos(elevation) * std::cos(azimuth));
  return look_at(target + offset, target, Vec3::UnitY(), focal, size);
}

nlohmann::json camera_to_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"size", c.size},
          {"rotation", to_json(c.rotation)}, {"translation", to_json(c.translation)}};
}

Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.size = j.at("size").get<int>();
    c.rotation = mat3_from_json(j.at("rotation"));
    c.translation = vec3_from_json(j.at("translation"));
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed camera JSON: ") + e.what());
  }
}

}  // namespace omnishape::geometry
