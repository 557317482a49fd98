#pragma once

#include <vector>

#include "omnishape/core/sim3.hpp"

namespace omnishape::triplane {

// Supervision for one object: points in the unit cube paired with signed distances
// (unit-cube units, negative inside).
struct SdfSampleSet {
  std::vector<Vec3> points;
  std::vector<double> distances;

  std::size_t size() const { return points.size(); }
  // Throws ValidationError unless sizes agree, |coords| <= 0.5 and distances are finite.
  void validate() const;
};

}  // namespace omnishape::triplane
