#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnishape/diffusion/networks.hpp"
#include "omnishape/diffusion/sampler.hpp"
#include "omnishape/geometry/render.hpp"
#include "omnishape/metrics/metrics.hpp"
#include "omnishape/nn/adam.hpp"

namespace omnishape::pipeline {

struct DatasetSpec {
  std::vector<std::string> families{"cup", "box", "ell"};
  std::size_t objects = 12;        // spread round-robin over the families
  std::size_t views = 48;          // training views per object
  std::size_t heldout_views = 24;  // ambiguous evaluation views over all objects
  int d = 32;
  double focal = 48.0;
  double distance = 2.4;
  double elevation_min = 0.2, elevation_max = 0.7;  // radians
  double ambiguity_iou = 0.9;   // another member's mask overlaps at least this much
  std::size_t heldout_attempts = 4000;
  std::size_t sdf_samples = 20000;
  double near_surface_sigma = 0.02;
  double uniform_fraction = 0.5;
  geometry::AugmentConfig augment;
};

struct TriplaneSpec {
  int p = 3;
  std::size_t n = 4;
  double alpha_tv = 0.01;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t points_per_epoch = 5000;
  nn::TrainConfig train{.peak_lr = 5e-3, .warmup_steps = 50, .total_steps = 3000, .batch_size = 1024, .seed = 0};
};

struct StageSpec {
  std::vector<std::size_t> widths;
  std::size_t time_freqs = 16;
  std::size_t time_width = 64;
  nn::TrainConfig train;
  double drop_prob = 0.0;  // norf stage: normals only; shape stage: all conditioning
  std::size_t sample_steps = 25;
  diffusion::Solver solver = diffusion::Solver::DpmSolverPP;
  double cfg_weight = 0.0;
  std::size_t checkpoint_every = 250;
};

struct DiffusionSpec {
  std::size_t T = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  StageSpec norf, shape;
};

struct EvalSpec {
  metrics::EvalProtocol protocol;
  std::size_t hypotheses = 8;
  std::size_t seeds = 3;  // sampling seeds per held-out view
  int lod = 5;
  bool use_normals = false;  // image-only conditioning at test time
  std::size_t ransac_iterations = 256;
  double threshold_fraction = 0.02;
};

struct RunConfig {
  std::string name = "desk";
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  TriplaneSpec triplane;
  DiffusionSpec diffusion;
  EvalSpec eval;
  std::filesystem::path output = "runs/desk";

  // ValidationError on inconsistent or out-of-range settings.
  void validate() const;
};

// "desk" (the default toy experiment), "smoke" (seconds-scale plumbing check) and
// "reference" (published model sizes; far beyond a CPU budget).
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json config_to_json(const RunConfig& c);
// Keys absent from `j` keep the values of the preset named by j["preset"] (default desk).
// The settings that determine results: everything but the output location.
nlohmann::json config_identity(const RunConfig& c);
std::string config_hash(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

// "a.b.c=value": value parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

}  // namespace omnishape::pipeline
