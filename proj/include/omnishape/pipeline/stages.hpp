#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnishape/conditioning/ortho_norf.hpp"
#include "omnishape/diffusion/networks.hpp"
#include "omnishape/diffusion/schedule.hpp"
#include "omnishape/geometry/render.hpp"
#include "omnishape/pipeline/config.hpp"
#include "omnishape/pipeline/dataset.hpp"
#include "omnishape/registration/registration.hpp"
#include "omnishape/triplane/field.hpp"

namespace omnishape::pipeline {

// --- tensor encodings shared by training and sampling

// [6, d, d]: NORF coordinates times 2, then normals; zero off the mask.
nn::Tensor encode_norf(const geometry::NorfMap& m);
// Inverse on the pixels of `mask`; coordinates are halved and clamped to the cube,
// normals renormalised (pixels with a vanishing normal leave the mask).
geometry::NorfMap decode_norf(const nn::Tensor& state, std::size_t index, std::span<const std::uint8_t> mask,
                              const geometry::Camera& cam);
// [4, d, d]: intensity mapped to [-1, 1] on the mask (-1 off it), camera-frame normals.
nn::Tensor encode_observation(const geometry::Observation& o, bool with_normals);
// [R, R, C] image layout to [C, R, R] and back.
nn::Tensor channels_first(const nn::Tensor& hwc);
nn::Tensor channels_last(const nn::Tensor& chw);

diffusion::NoiseSchedule make_schedule(const RunConfig& cfg);
enum class Stage { Norf, Shape };
std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);
diffusion::ConvDenoiserConfig denoiser_config(const RunConfig& cfg, Stage stage);

// Output layout under cfg.output.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path triplanes() const { return root / "triplanes"; }
  std::filesystem::path stage(Stage s) const { return root / (s == Stage::Norf ? "norf_model" : "shape_model"); }
  std::filesystem::path estimates(const std::string& name = "estimates") const { return root / name; }
  std::filesystem::path eval() const { return root / "eval"; }
};

// --- commands. Each writes a manifest.json listing its files with content hashes.

nlohmann::json cmd_gen_dataset(const RunConfig& cfg);
nlohmann::json cmd_fit_triplanes(const RunConfig& cfg);

struct TrainOptions {
  bool resume = false;  // continue from the last checkpoint if one exists
  long stop_after = 0;  // stop once this many steps are done (0 = run to the end)
};
// Returns the manifest; when stopped early only the checkpoint and loss curve are written.
nlohmann::json cmd_train_denoiser(const RunConfig& cfg, Stage stage, const TrainOptions& opt = {});

// Trained models of one run.
struct Models {
  diffusion::NoiseSchedule schedule = diffusion::NoiseSchedule::linear();
  std::unique_ptr<diffusion::TrainableDenoiser> norf, shape;
  nn::Mlp decoder;
  std::vector<double> ref_std;
  int p = 0;
  std::size_t n = 0;
};
Models load_models(const RunConfig& cfg);

struct DepthView {
  std::vector<double> depth;
  std::vector<std::uint8_t> mask;
  geometry::Camera camera;
};
DepthView depth_of(const geometry::NorfMap& m);

struct Hypothesis {
  geometry::NorfMap norf;
  std::string status = "ok";  // or the reason the hypothesis stopped early
  nn::Tensor ortho;           // [R, R, 48]
  triplane::Triplane triplane;
  geometry::TriangleMesh mesh;
  bool registered = false;
  registration::RegistrationResult registration;
};
struct Estimate {
  std::vector<Hypothesis> hypotheses;
  std::optional<std::size_t> selected;  // with depth only
};
// N hypotheses for one observation. Failures in filtering, extraction or registration
// are recorded per hypothesis and do not stop the batch.
Estimate estimate(const Models& models, const RunConfig& cfg, const geometry::Observation& obs,
                  const std::optional<DepthView>& depth, std::size_t n, std::uint64_t seed);
void write_estimate(const std::filesystem::path& dir, const Estimate& e, const Models& models, nlohmann::json& files,
                    const std::filesystem::path& root);

// All held-out views for eval.seeds seeds, into a fresh directory (UsageError if it
// already exists; estimates are never overwritten).
nlohmann::json cmd_estimate_heldout(const RunConfig& cfg, const std::string& name = "estimates");
// One observation, optional depth, written to `out`.
nlohmann::json cmd_estimate_one(const RunConfig& cfg, const std::filesystem::path& observation,
                                const std::optional<std::filesystem::path>& depth, std::size_t n, std::uint64_t seed,
                                const std::filesystem::path& out);

// Reads the estimates, scores them against the dataset, writes report.json, curves.csv,
// scenes.csv and best_of_n.svg. ValidationError when the estimates were made from a
// different dataset or configuration.
nlohmann::json cmd_eval(const RunConfig& cfg, const std::string& estimates = "estimates");

// Human-readable summary of any artifact; throws ValidationError when it fails its checks.
std::string inspect(const std::filesystem::path& path);

// --- figure-style outputs

struct Series {
  std::string name;
  std::vector<double> x, y;
};
void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<Series>& series);
std::string format_number(double v);

}  // namespace omnishape::pipeline
