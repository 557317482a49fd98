#pragma once

#include <json.hpp>

#include "omnishape/core/sim3.hpp"

namespace omnishape {

nlohmann::json to_json(const Vec3& v);
nlohmann::json to_json(const Mat3& m);  // row-major nested arrays
nlohmann::json to_json(const Sim3& s);
Vec3 vec3_from_json(const nlohmann::json& j);
Mat3 mat3_from_json(const nlohmann::json& j);
Sim3 sim3_from_json(const nlohmann::json& j);

// Stable text form for reports: 2-space indent, fixed key order (nlohmann sorts keys).
std::string dump_json(const nlohmann::json& j);

}  // namespace omnishape
