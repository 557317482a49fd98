#include "omnishape/pipeline/config.hpp"

#include <fstream>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"

namespace omnishape::pipeline {
namespace {

using nlohmann::json;

json train_to_json(const nn::TrainConfig& t) {
  return {{"peak_lr", t.peak_lr}, {"warmup_steps", t.warmup_steps}, {"total_steps", t.total_steps},
          {"batch_size", t.batch_size}, {"seed", t.seed}};
}

void train_from_json(const json& j, nn::TrainConfig& t) {
  t.peak_lr = j.value("peak_lr", t.peak_lr);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.total_steps = j.value("total_steps", t.total_steps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
}

json stage_to_json(const StageSpec& s) {
  return {{"widths", s.widths},
          {"time_freqs", s.time_freqs},
          {"time_width", s.time_width},
          {"train", train_to_json(s.train)},
          {"drop_prob", s.drop_prob},
          {"sample_steps", s.sample_steps},
          {"solver", diffusion::to_string(s.solver)},
          {"cfg_weight", s.cfg_weight},
          {"checkpoint_every", s.checkpoint_every}};
}

void stage_from_json(const json& j, StageSpec& s) {
  s.widths = j.value("widths", s.widths);
  s.time_freqs = j.value("time_freqs", s.time_freqs);
  s.time_width = j.value("time_width", s.time_width);
  if (j.contains("train")) train_from_json(j.at("train"), s.train);
  s.drop_prob = j.value("drop_prob", s.drop_prob);
  s.sample_steps = j.value("sample_steps", s.sample_steps);
  if (j.contains("solver")) s.solver = diffusion::solver_from_string(j.at("solver").get<std::string>());
  s.cfg_weight = j.value("cfg_weight", s.cfg_weight);
  s.checkpoint_every = j.value("checkpoint_every", s.checkpoint_every);
}

void check(bool ok, const std::string& what) {
  if (!ok) throw ValidationError("config: " + what);
}

void validate_stage(const StageSpec& s, const std::string& name, std::size_t T) {
  check(!s.widths.empty(), name + ".widths must be nonempty");
  check(s.train.total_steps > 0 && s.train.peak_lr > 0.0 && s.train.batch_size > 0, name + ".train needs positive steps, lr and batch");
  check(s.train.warmup_steps <= s.train.total_steps, name + ".train warmup exceeds total steps");
  check(s.drop_prob >= 0.0 && s.drop_prob <= 1.0, name + ".drop_prob must be a probability");
  check(s.sample_steps >= 2 && s.sample_steps <= T, name + ".sample_steps must be in [2, T]");
  check(s.cfg_weight >= 0.0, name + ".cfg_weight must be nonnegative");
  check(s.checkpoint_every > 0, name + ".checkpoint_every must be positive");
}

}  // namespace

void RunConfig::validate() const {
  check(!name.empty(), "name must be set");
  check(!dataset.families.empty(), "dataset.families must be nonempty");
  for (const auto& f : dataset.families) check(f == "cup" || f == "box" || f == "ell", "unknown family " + f);
  check(dataset.objects >= dataset.families.size(), "dataset.objects must cover every family");
  check(dataset.views > 0 && dataset.heldout_views > 0, "dataset view counts must be positive");
  check(dataset.d >= 8 && dataset.d % 2 == 0, "dataset.d must be even and at least 8");
  check(dataset.focal > 0.0 && dataset.distance > 1.0, "dataset camera must sit outside the object");
  check(dataset.elevation_min <= dataset.elevation_max, "dataset elevation range is empty");
  check(dataset.ambiguity_iou > 0.0 && dataset.ambiguity_iou <= 1.0, "dataset.ambiguity_iou must be in (0, 1]");
  check(dataset.sdf_samples > 0, "dataset.sdf_samples must be positive");
  check(triplane.p >= 1 && triplane.p <= 7, "triplane.p must be in [1, 7]");
  check(triplane.n > 0, "triplane.n must be positive");
  check(triplane.alpha_tv >= 0.0, "triplane.alpha_tv must be nonnegative");
  check(triplane.train.total_steps > 0 && triplane.train.warmup_steps <= triplane.train.total_steps, "triplane.train steps");
  check(diffusion.T >= 2, "diffusion.T must be at least 2");
  check(diffusion.beta_start > 0.0 && diffusion.beta_start < diffusion.beta_end && diffusion.beta_end < 1.0, "diffusion betas");
  validate_stage(diffusion.norf, "diffusion.norf", diffusion.T);
  validate_stage(diffusion.shape, "diffusion.shape", diffusion.T);
  check((std::size_t{1} << triplane.p) % (std::size_t{1} << (diffusion.shape.widths.size() - 1)) == 0,
        "diffusion.shape has more levels than the triplane resolution allows");
  check(static_cast<std::size_t>(dataset.d) % (std::size_t{1} << (diffusion.norf.widths.size() - 1)) == 0,
        "diffusion.norf has more levels than the image size allows");
  eval.protocol.validate();
  check(eval.hypotheses > 0 && eval.seeds > 0, "eval needs at least one hypothesis and seed");
  check(eval.lod >= 2 && eval.lod <= 8, "eval.lod must be in [2, 8]");
  check(eval.ransac_iterations > 0 && eval.threshold_fraction > 0.0, "eval RANSAC settings");
  check(!output.empty(), "output directory must be set");
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.name = name;
  c.output = "runs/" + name;
  c.diffusion.norf.widths = {16, 32, 64};
  c.diffusion.norf.train = {.peak_lr = 2e-3, .warmup_steps = 100, .total_steps = 3000, .batch_size = 16, .seed = 0};
  c.diffusion.norf.drop_prob = 0.5;
  c.diffusion.norf.sample_steps = 50;
  c.diffusion.shape.widths = {64, 128};
  c.diffusion.shape.train = {.peak_lr = 2e-3, .warmup_steps = 100, .total_steps = 3000, .batch_size = 32, .seed = 0};
  c.diffusion.shape.drop_prob = 0.2;
  c.diffusion.shape.sample_steps = 25;
  c.eval.protocol.n_points = 2000;
  c.eval.protocol.f_threshold = 0.05;
  if (name == "desk") return c;
  if (name == "smoke") {
    c.dataset.families = {"cup"};
    c.dataset.objects = 2;
    c.dataset.views = 4;
    c.dataset.heldout_views = 2;
    c.dataset.d = 16;
    c.dataset.focal = 24.0;
    c.dataset.ambiguity_iou = 0.5;
    c.dataset.heldout_attempts = 200;
    c.dataset.sdf_samples = 2000;
    c.triplane.p = 2;
    c.triplane.hidden = {16};
    c.triplane.points_per_epoch = 1000;
    c.triplane.train = {.peak_lr = 5e-3, .warmup_steps = 5, .total_steps = 40, .batch_size = 256, .seed = 0};
    c.diffusion.norf.widths = {8, 8};
    c.diffusion.norf.time_freqs = 4;
    c.diffusion.norf.time_width = 8;
    c.diffusion.norf.train = {.peak_lr = 1e-3, .warmup_steps = 2, .total_steps = 10, .batch_size = 4, .seed = 0};
    c.diffusion.norf.sample_steps = 4;
    c.diffusion.norf.checkpoint_every = 5;
    c.diffusion.shape.widths = {8};
    c.diffusion.shape.time_freqs = 4;
    c.diffusion.shape.time_width = 8;
    c.diffusion.shape.train = {.peak_lr = 1e-3, .warmup_steps = 2, .total_steps = 10, .batch_size = 4, .seed = 0};
    c.diffusion.shape.sample_steps = 3;
    c.diffusion.shape.checkpoint_every = 5;
    c.eval.hypotheses = 2;
    c.eval.seeds = 1;
    c.eval.lod = 3;
    c.eval.protocol.n_points = 200;
    c.eval.ransac_iterations = 32;
    return c;
  }
  if (name == "reference") {
    // Full-size models; the desk experiment shrinks these.
    c.dataset.d = 128;
    c.dataset.focal = 192.0;
    c.triplane.p = 5;
    c.triplane.n = 12;
    c.triplane.hidden = {512, 512};
    c.triplane.train = {.peak_lr = 1e-2, .warmup_steps = 500, .total_steps = 100000, .batch_size = 128, .seed = 0};
    c.diffusion.norf.widths = {128, 128, 256, 256, 512, 512};
    c.diffusion.norf.train = {.peak_lr = 1e-4, .warmup_steps = 500, .total_steps = 100000, .batch_size = 128, .seed = 0};
    c.diffusion.shape.widths = {540, 1080, 2160};
    c.diffusion.shape.train = {.peak_lr = 1e-4, .warmup_steps = 500, .total_steps = 100000, .batch_size = 32, .seed = 0};
    c.eval.lod = 6;
    c.eval.protocol.n_points = 10000;
    c.eval.hypotheses = 10;
    return c;
  }
  throw ValidationError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"desk", "smoke", "reference"}; }

nlohmann::json config_to_json(const RunConfig& c) {
  const auto& d = c.dataset;
  return {{"preset", c.name},
          {"name", c.name},
          {"seed", c.seed},
          {"output", c.output.string()},
          {"dataset",
           {{"families", d.families},
            {"objects", d.objects},
            {"views", d.views},
            {"heldout_views", d.heldout_views},
            {"d", d.d},
            {"focal", d.focal},
            {"distance", d.distance},
            {"elevation_min", d.elevation_min},
            {"elevation_max", d.elevation_max},
            {"ambiguity_iou", d.ambiguity_iou},
            {"heldout_attempts", d.heldout_attempts},
            {"sdf_samples", d.sdf_samples},
            {"near_surface_sigma", d.near_surface_sigma},
            {"uniform_fraction", d.uniform_fraction},
            {"augment",
             {{"downscale_prob", d.augment.downscale_prob},
              {"rotate_prob", d.augment.rotate_prob},
              {"max_rotation", d.augment.max_rotation}}}}},
          {"triplane",
           {{"p", c.triplane.p},
            {"n", c.triplane.n},
            {"alpha_tv", c.triplane.alpha_tv},
            {"hidden", c.triplane.hidden},
            {"points_per_epoch", c.triplane.points_per_epoch},
            {"train", train_to_json(c.triplane.train)}}},
          {"diffusion",
           {{"T", c.diffusion.T},
            {"beta_start", c.diffusion.beta_start},
            {"beta_end", c.diffusion.beta_end},
            {"norf", stage_to_json(c.diffusion.norf)},
            {"shape", stage_to_json(c.diffusion.shape)}}},
          {"eval",
           {{"n_points", c.eval.protocol.n_points},
            {"f_threshold", c.eval.protocol.f_threshold},
            {"hypotheses", c.eval.hypotheses},
            {"seeds", c.eval.seeds},
            {"lod", c.eval.lod},
            {"use_normals", c.eval.use_normals},
            {"ransac_iterations", c.eval.ransac_iterations},
            {"threshold_fraction", c.eval.threshold_fraction}}}};
}

nlohmann::json config_identity(const RunConfig& c) {
  auto j = config_to_json(c);
  j.erase("output");
  return j;
}

std::string config_hash(const RunConfig& c) {
  const std::string text = config_identity(c).dump();
  return io::fnv1a_hex({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

RunConfig config_from_json(const nlohmann::json& j) {
  try {
    RunConfig c = preset(j.value("preset", std::string("desk")));
    c.name = j.value("name", c.name);
    if (!j.contains("seed")) throw ValidationError("config: seed is mandatory");
    c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    if (j.contains("dataset")) {
      const auto& s = j.at("dataset");
      auto& d = c.dataset;
      d.families = s.value("families", d.families);
      d.objects = s.value("objects", d.objects);
      d.views = s.value("views", d.views);
      d.heldout_views = s.value("heldout_views", d.heldout_views);
      d.d = s.value("d", d.d);
      d.focal = s.value("focal", d.focal);
      d.distance = s.value("distance", d.distance);
      d.elevation_min = s.value("elevation_min", d.elevation_min);
      d.elevation_max = s.value("elevation_max", d.elevation_max);
      d.ambiguity_iou = s.value("ambiguity_iou", d.ambiguity_iou);
      d.heldout_attempts = s.value("heldout_attempts", d.heldout_attempts);
      d.sdf_samples = s.value("sdf_samples", d.sdf_samples);
      d.near_surface_sigma = s.value("near_surface_sigma", d.near_surface_sigma);
      d.uniform_fraction = s.value("uniform_fraction", d.uniform_fraction);
      if (s.contains("augment")) {
        const auto& a = s.at("augment");
        d.augment.downscale_prob = a.value("downscale_prob", d.augment.downscale_prob);
        d.augment.rotate_prob = a.value("rotate_prob", d.augment.rotate_prob);
        d.augment.max_rotation = a.value("max_rotation", d.augment.max_rotation);
      }
    }
    if (j.contains("triplane")) {
      const auto& s = j.at("triplane");
      c.triplane.p = s.value("p", c.triplane.p);
      c.triplane.n = s.value("n", c.triplane.n);
      c.triplane.alpha_tv = s.value("alpha_tv", c.triplane.alpha_tv);
      c.triplane.hidden = s.value("hidden", c.triplane.hidden);
      c.triplane.points_per_epoch = s.value("points_per_epoch", c.triplane.points_per_epoch);
      if (s.contains("train")) train_from_json(s.at("train"), c.triplane.train);
    }
    if (j.contains("diffusion")) {
      const auto& s = j.at("diffusion");
      c.diffusion.T = s.value("T", c.diffusion.T);
      c.diffusion.beta_start = s.value("beta_start", c.diffusion.beta_start);
      c.diffusion.beta_end = s.value("beta_end", c.diffusion.beta_end);
      if (s.contains("norf")) stage_from_json(s.at("norf"), c.diffusion.norf);
      if (s.contains("shape")) stage_from_json(s.at("shape"), c.diffusion.shape);
    }
    if (j.contains("eval")) {
      const auto& s = j.at("eval");
      c.eval.protocol.n_points = s.value("n_points", c.eval.protocol.n_points);
      c.eval.protocol.f_threshold = s.value("f_threshold", c.eval.protocol.f_threshold);
      c.eval.hypotheses = s.value("hypotheses", c.eval.hypotheses);
      c.eval.seeds = s.value("seeds", c.eval.seeds);
      c.eval.lod = s.value("lod", c.eval.lod);
      c.eval.use_normals = s.value("use_normals", c.eval.use_normals);
      c.eval.ransac_iterations = s.value("ransac_iterations", c.eval.ransac_iterations);
      c.eval.threshold_fraction = s.value("threshold_fraction", c.eval.threshold_fraction);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

void save_config(const std::filesystem::path& path, const RunConfig& c) {
  io::write_file(path, dump_json(config_to_json(c)));
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  nlohmann::json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("empty key segment in override " + assignment);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace omnishape::pipeline
