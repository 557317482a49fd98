#pragma once

#include <json.hpp>

#include "omnishape/core/sim3.hpp"

namespace omnishape::geometry {

// Pinhole camera, OpenCV axes (x right, y down, z forward). Pixel (u, v) covers
// [u, u+1) x [v, v+1); rays go through pixel centres.
struct Camera {
  double fx = 64, fy = 64, cx = 32, cy = 32;
  int size = 64;  // d x d pixels
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 to_world(const Vec3& cam) const { return rotation.transpose() * (cam - translation); }
  // World-frame direction of the ray through pixel (u, v), scaled so that its camera z is 1:
  // the ray parameter then equals depth.
  Vec3 ray_direction(int u, int v) const;
  // Camera-frame point at `depth` along the ray through (u, v).
  Vec3 back_project(int u, int v, double depth) const;
  // Throws ValidationError unless fx, fy > 0, size > 0 and rotation is proper orthonormal.
  void validate() const;
};

// Camera at `eye` looking at `target`; `up` fixes the roll (image y points along -up).
Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int size);
// Same, with the principal point at the image centre.
Camera orbit_camera(const Vec3& target, double distance, double azimuth, double elevation, double focal, int size);

nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);

}  // namespace omnishape::geometry
