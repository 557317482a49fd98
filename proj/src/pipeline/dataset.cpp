#include "omnishape/pipeline/dataset.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::pipeline {
namespace fs = std::filesystem;

namespace {

std::string two_digits(std::size_t i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

Mat3 turn_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }

}  // namespace

geometry::Shape family_member(const std::string& family, std::size_t variant, std::size_t count) {
  if (variant >= count) throw UsageError("family variant out of range");
  const double t = count > 1 ? static_cast<double>(variant) / static_cast<double>(count - 1) : 0.5;
  geometry::Shape s;
  if (family == "cup") {
    geometry::CupSpec spec;
    spec.radius = 0.3;
    spec.height = 0.6;
    spec.handle = variant > 0 || count == 1;
    spec.handle_reach = 0.1 + 0.15 * t;
    spec.handle_span = 0.25 + 0.2 * t;
    s = geometry::make_cup(spec);
  } else if (family == "box") {
    s = geometry::make_box(Vec3::Zero(), Vec3(0.5, 0.3, 0.1 + 0.3 * t));
  } else if (family == "ell") {
    const double w = 0.2 + 0.4 * t;  // width of the upright post
    geometry::OrientedBox base{Vec3(0.0, -0.2, 0.0), Mat3::Identity(), Vec3(0.5, 0.1, 0.3)};
    geometry::OrientedBox post{Vec3(-0.5 + 0.5 * w, 0.075, 0.0), Mat3::Identity(), Vec3(0.5 * w, 0.225, 0.3)};
    s = geometry::make_ell({base, post});
  } else {
    throw ValidationError("unknown shape family '" + family + "'");
  }
  return geometry::normalize_to_unit_cube(s);
}

std::vector<ObjectRecord> make_objects(const RunConfig& cfg) {
  const auto& d = cfg.dataset;
  const std::size_t F = d.families.size();
  std::vector<ObjectRecord> out;
  for (std::size_t i = 0; i < d.objects; ++i) {
    const std::string& fam = d.families[i % F];
    const std::size_t count = d.objects / F + (i % F < d.objects % F ? 1 : 0);
    ObjectRecord r;
    r.id = "obj" + two_digits(i);
    r.family = fam;
    r.variant = i / F;
    r.shape = family_member(fam, r.variant, count);
    Rng rng(derive_seed(cfg.seed, 1, i));
    r.pose.rotation = turn_y(rng.uniform(0.0, 2.0 * std::numbers::pi));
    r.shape = geometry::placed(r.shape, r.pose * r.shape.to_world);
    out.push_back(std::move(r));
  }
  return out;
}

ViewRecord random_view(const RunConfig& cfg, const ObjectRecord& obj, Rng& rng) {
  const auto& d = cfg.dataset;
  ViewRecord v;
  const Vec3 target = obj.shape.to_world.translation;
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double el = rng.uniform(d.elevation_min, d.elevation_max);
  v.camera = geometry::orbit_camera(target, d.distance, az, el, d.focal, d.d);
  Vec3 l = (v.camera.center() - target).normalized() + 0.5 * Vec3(rng.normal(), rng.normal(), rng.normal());
  v.light = l.normalized();
  return v;
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("mask sizes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

std::vector<ViewRecord> ambiguous_views(const RunConfig& cfg, const std::vector<ObjectRecord>& objects) {
  const auto& d = cfg.dataset;
  std::vector<ViewRecord> out;
  for (std::size_t attempt = 0; attempt < d.heldout_attempts && out.size() < d.heldout_views; ++attempt) {
    const std::size_t i = attempt % objects.size();
    Rng rng(derive_seed(cfg.seed, 2, attempt));
    ViewRecord v = random_view(cfg, objects[i], rng);
    v.object = i;
    const auto own = geometry::render_norf(objects[i].shape, v.camera);
    if (own.hit_count() < 8) continue;
    double best = 0.0;
    std::string who;
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (j == i || objects[j].family != objects[i].family) continue;
      // The other member standing where this one stands: members share the family frame.
      const Sim3 norm_j = objects[j].pose.inverse() * objects[j].shape.to_world;
      const auto other = geometry::render_norf(geometry::placed(objects[j].shape, objects[i].pose * norm_j), v.camera);
      const double iou = mask_iou(own.mask, other.mask);
      if (iou > best) {
        best = iou;
        who = objects[j].id;
      }
    }
    if (best < d.ambiguity_iou) continue;
    v.iou = best;
    v.confusable = who;
    v.id = "held" + two_digits(out.size());
    out.push_back(std::move(v));
  }
  if (out.size() < d.heldout_views)
    throw ValidationError("only " + std::to_string(out.size()) + " ambiguous held-out views found in " +
                          std::to_string(d.heldout_attempts) + " attempts");
  return out;
}

void save_sdf_samples(const fs::path& path, const triplane::SdfSampleSet& s) {
  s.validate();
  io::ByteWriter w;
  w.magic("SDS1");
  w.u32(static_cast<std::uint32_t>(s.size()));
  std::vector<double> flat;
  flat.reserve(4 * s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    flat.insert(flat.end(), {s.points[i].x(), s.points[i].y(), s.points[i].z()});
    flat.push_back(s.distances[i]);
  }
  w.f64_array(flat);
  w.save(path);
}

triplane::SdfSampleSet load_sdf_samples(const fs::path& path) {
  auto r = io::ByteReader::open(path);
  r.expect_magic("SDS1");
  const std::size_t n = r.u32();
  const auto flat = r.f64_array(4 * n);
  if (!r.at_end()) throw ValidationError("trailing bytes in " + path.string());
  triplane::SdfSampleSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.points.emplace_back(flat[4 * i], flat[4 * i + 1], flat[4 * i + 2]);
    s.distances.push_back(flat[4 * i + 3]);
  }
  s.validate();
  return s;
}

nlohmann::json file_entry(const fs::path& root, const fs::path& rel) {
  return {{"path", rel.generic_string()}, {"hash", io::file_hash(root / rel)}};
}

void verify_files(const fs::path& root, const nlohmann::json& files) {
  for (const auto& f : files) {
    const fs::path p = root / f.at("path").get<std::string>();
    if (!fs::exists(p)) throw ValidationError("manifest lists missing file " + p.string());
    if (io::file_hash(p) != f.at("hash").get<std::string>()) throw ValidationError("hash mismatch for " + p.string());
  }
}

namespace {

nlohmann::json view_json(const ViewRecord& v, const std::vector<ObjectRecord>& objects) {
  nlohmann::json j{{"id", v.id}, {"object", objects[v.object].id}, {"camera", geometry::camera_to_json(v.camera)},
                   {"light", to_json(v.light)}};
  if (!v.confusable.empty()) {
    j["confusable"] = v.confusable;
    j["iou"] = v.iou;
  }
  return j;
}

void write_view(const fs::path& root, const std::string& split, const ViewRecord& v, const ObjectRecord& obj,
                nlohmann::json& files) {
  const auto obs = geometry::render_observation(obj.shape, v.camera, v.light);
  const auto norf = geometry::render_norf(obj.shape, v.camera);
  norf.validate();
  const fs::path base = fs::path(split) / v.id;
  geometry::save_observation(root / (base.string() + ".obs"), obs);
  geometry::save_norf_map(root / (base.string() + ".norf"), norf);
  for (const char* ext : {".obs.json", ".obs.bin", ".norf.json", ".norf.bin"}) files.push_back(file_entry(root, base.string() + ext));
}

}  // namespace

nlohmann::json generate_dataset(const RunConfig& cfg, const fs::path& root) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(root / "objects", ec);
  fs::create_directories(root / "train", ec);
  fs::create_directories(root / "heldout", ec);
  if (ec || !fs::is_directory(root / "heldout")) throw ValidationError("cannot create dataset directory " + root.string());

  const auto objects = make_objects(cfg);
  nlohmann::json files = nlohmann::json::array(), objs = nlohmann::json::array(), train = nlohmann::json::array(),
                 held = nlohmann::json::array();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& o = objects[i];
    io::write_file(root / "objects" / (o.id + ".shape.json"), dump_json(geometry::shape_to_json(o.shape)));
    Rng rng(derive_seed(cfg.seed, 3, i));
    geometry::SampleSpec spec{cfg.dataset.sdf_samples, cfg.dataset.uniform_fraction, cfg.dataset.near_surface_sigma};
    save_sdf_samples(root / "objects" / (o.id + ".sdf"), geometry::sample_sdf_points(o.shape, spec, rng));
    files.push_back(file_entry(root, "objects/" + o.id + ".shape.json"));
    files.push_back(file_entry(root, "objects/" + o.id + ".sdf"));
    objs.push_back({{"id", o.id}, {"family", o.family}, {"variant", o.variant}, {"pose", to_json(o.pose)}});
  }
  for (std::size_t i = 0; i < objects.size(); ++i)
    for (std::size_t k = 0; k < cfg.dataset.views; ++k) {
      Rng rng(derive_seed(cfg.seed, 4, i, k));
      ViewRecord v = random_view(cfg, objects[i], rng);
      v.object = i;
      v.id = objects[i].id + "_v" + two_digits(k);
      write_view(root, "train", v, objects[i], files);
      train.push_back(view_json(v, objects));
    }
  for (const auto& v : ambiguous_views(cfg, objects)) {
    write_view(root, "heldout", v, objects[v.object], files);
    held.push_back(view_json(v, objects));
  }
  const nlohmann::json manifest{{"kind", "dataset"},
                                {"config", config_identity(cfg)},
                                {"objects", objs},
                                {"train", train},
                                {"heldout", held},
                                {"files", files}};
  io::write_file(root / "manifest.json", dump_json(manifest));
  return manifest;
}

geometry::Observation Dataset::observation(const ViewRecord& v, bool heldout) const {
  return geometry::load_observation(root / (heldout ? "heldout" : "train") / (v.id + ".obs"));
}

geometry::NorfMap Dataset::norf(const ViewRecord& v, bool heldout) const {
  return geometry::load_norf_map(root / (heldout ? "heldout" : "train") / (v.id + ".norf"));
}

triplane::SdfSampleSet Dataset::samples(std::size_t object) const {
  return load_sdf_samples(root / "objects" / (objects.at(object).id + ".sdf"));
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.root = root;
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) throw ValidationError("no dataset manifest at " + mpath.string());
  try {
    const auto bytes = io::read_file(mpath);
    ds.manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
    if (ds.manifest.value("kind", "") != "dataset") throw ValidationError(mpath.string() + " is not a dataset manifest");
    verify_files(root, ds.manifest.at("files"));
    std::map<std::string, std::size_t> index;
    for (const auto& o : ds.manifest.at("objects")) {
      ObjectRecord r;
      r.id = o.at("id").get<std::string>();
      r.family = o.at("family").get<std::string>();
      r.variant = o.at("variant").get<std::size_t>();
      r.pose = sim3_from_json(o.at("pose"));
      const auto sbytes = io::read_file(root / "objects" / (r.id + ".shape.json"));
      r.shape = geometry::shape_from_json(nlohmann::json::parse(sbytes.begin(), sbytes.end()));
      index[r.id] = ds.objects.size();
      ds.objects.push_back(std::move(r));
    }
    auto views = [&](const nlohmann::json& arr, std::vector<ViewRecord>& out) {
      for (const auto& j : arr) {
        ViewRecord v;
        v.id = j.at("id").get<std::string>();
        const auto it = index.find(j.at("object").get<std::string>());
        if (it == index.end()) throw ValidationError("view " + v.id + " names an unknown object");
        v.object = it->second;
        v.camera = geometry::camera_from_json(j.at("camera"));
        v.light = vec3_from_json(j.at("light"));
        v.confusable = j.value("confusable", std::string());
        v.iou = j.value("iou", 0.0);
        out.push_back(std::move(v));
      }
    };
    views(ds.manifest.at("train"), ds.train);
    views(ds.manifest.at("heldout"), ds.heldout);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

}  // namespace omnishape::pipeline
