#include "omnishape/core/json_io.hpp"

#include "omnishape/core/error.hpp"

namespace omnishape {

nlohmann::json to_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

nlohmann::json to_json(const Mat3& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

nlohmann::json to_json(const Sim3& s) {
  return {{"rotation", to_json(s.rotation)}, {"translation", to_json(s.translation)}, {"scale", s.scale}};
}

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Mat3 mat3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("expected a 3x3 matrix, got " + j.dump());
  Mat3 m;
  for (int r = 0; r < 3; ++r) m.row(r) = vec3_from_json(j[r]).transpose();
  return m;
}

Sim3 sim3_from_json(const nlohmann::json& j) {
  Sim3 s;
  s.rotation = mat3_from_json(j.at("rotation"));
  s.translation = vec3_from_json(j.at("translation"));
  s.scale = j.at("scale").get<double>();
  if (!(s.scale > 0.0)) throw ValidationError("similarity scale must be positive");
  return s;
}

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace omnishape
