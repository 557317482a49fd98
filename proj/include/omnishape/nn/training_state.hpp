#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "omnishape/nn/adam.hpp"

namespace omnishape::nn {

// Everything needed to resume an optimisation bit-exactly: float64 parameters, Adam
// moments, the step counter and the sampling RNG state. Format "TRS1":
// u32 tensor count, per tensor (u32 rank, u32 extents..., f64 values), then the same for
// both moment lists, u32 step, u32 RNG-state length + bytes.
struct TrainingState {
  std::vector<Tensor> params;
  AdamState adam;
  std::string rng_state;

  void save(const std::filesystem::path& path) const;
  static TrainingState load(const std::filesystem::path& path);
};

TrainingState capture_state(const std::vector<Var>& params, const AdamState& adam, const std::string& rng_state);
// Copies parameters back into live graph leaves; shapes must match.
void restore_params(const TrainingState& state, std::vector<Var>& params);

}  // namespace omnishape::nn
