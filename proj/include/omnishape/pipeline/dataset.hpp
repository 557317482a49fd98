#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "omnishape/geometry/render.hpp"
#include "omnishape/pipeline/config.hpp"
#include "omnishape/triplane/sdf_samples.hpp"

namespace omnishape::pipeline {

// Member `variant` of `count` in a family. Family members share their main body and
// differ in a part that is often out of sight: cup handles, box depth, the post of an L.
// The returned shape is in its NORF frame, metric placement in to_world.
geometry::Shape family_member(const std::string& family, std::size_t variant, std::size_t count);

// Round-robin assignment of objects to families, plus the world pose of each object
// (a turn about the vertical axis).
struct ObjectRecord {
  std::string id;
  std::string family;
  std::size_t variant = 0;
  geometry::Shape shape;  // NORF frame, to_world placed in the scene
  Sim3 pose;              // family frame -> world; shape.to_world = pose * normalisation
};
std::vector<ObjectRecord> make_objects(const RunConfig& cfg);

struct ViewRecord {
  std::string id;
  std::size_t object = 0;
  geometry::Camera camera;
  Vec3 light = Vec3::UnitZ();
  // Held-out views: best-matching other member and its mask IoU.
  std::string confusable;
  double iou = 0.0;
};

// Cameras on an orbit around the object with light from near the camera.
ViewRecord random_view(const RunConfig& cfg, const ObjectRecord& obj, Rng& rng);
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Views where another family member placed the same way has a mask IoU of at least
// dataset.ambiguity_iou. ValidationError if too few turn up in heldout_attempts tries.
std::vector<ViewRecord> ambiguous_views(const RunConfig& cfg, const std::vector<ObjectRecord>& objects);

// "SDS1": u32 count, then float64 x y z d per sample.
void save_sdf_samples(const std::filesystem::path& path, const triplane::SdfSampleSet& s);
triplane::SdfSampleSet load_sdf_samples(const std::filesystem::path& path);

// Layout under <root>:
//   manifest.json
//   objects/<id>.shape.json, objects/<id>.sdf
//   train/<view>.obs.{json,bin}, train/<view>.norf.{json,bin}
//   heldout/<view>.obs.{json,bin}, heldout/<view>.norf.{json,bin}
// The manifest lists every file with its content hash.
nlohmann::json generate_dataset(const RunConfig& cfg, const std::filesystem::path& root);

struct Dataset {
  std::filesystem::path root;
  nlohmann::json manifest;
  std::vector<ObjectRecord> objects;
  std::vector<ViewRecord> train, heldout;

  geometry::Observation observation(const ViewRecord& v, bool heldout) const;
  geometry::NorfMap norf(const ViewRecord& v, bool heldout) const;
  triplane::SdfSampleSet samples(std::size_t object) const;
};
// Validates the manifest and that every listed file still matches its hash.
Dataset load_dataset(const std::filesystem::path& root);

// Hash of every file listed in a manifest, in listing order.
nlohmann::json file_entry(const std::filesystem::path& root, const std::filesystem::path& rel);
void verify_files(const std::filesystem::path& root, const nlohmann::json& files);

}  // namespace omnishape::pipeline
