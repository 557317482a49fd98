#include "omnishape/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"
#include "omnishape/diffusion/training.hpp"
#include "omnishape/metrics/metrics.hpp"
#include "omnishape/nn/training_state.hpp"
#include "omnishape/surface/extract.hpp"

namespace omnishape::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& p) {
  if (!fs::exists(p)) throw ValidationError("missing " + p.string());
  const auto bytes = io::read_file(p);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { io::write_file(p, dump_json(j)); }

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw ValidationError("cannot create directory " + p.string());
}

std::string rel(const fs::path& p, const fs::path& root) { return fs::relative(p, root).generic_string(); }

void add_file(json& files, const fs::path& root, const fs::path& p) { files.push_back(file_entry(root, rel(p, root))); }

std::string dataset_hash(const RunConfig& cfg) { return io::file_hash(RunPaths{cfg.output}.dataset() / "manifest.json"); }

void copy_tensor_sample(const nn::Tensor& src, std::size_t index, nn::Tensor& dst, std::size_t dst_index) {
  const std::size_t n = src.size() / src.dim(0);
  std::copy_n(src.ptr() + index * n, n, dst.ptr() + dst_index * n);
}

void write_loss_csv(const fs::path& p, const std::vector<double>& losses, const char* x) {
  std::string out = std::string(x) + ",loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out += std::to_string(i + 1) + "," + format_number(losses[i]) + "\n";
  io::write_file(p, out);
}

std::vector<double> read_loss_csv(const fs::path& p) {
  std::vector<double> out;
  if (!fs::exists(p)) return out;
  const auto bytes = io::read_file(p);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma != std::string::npos) out.push_back(std::stod(line.substr(comma + 1)));
  }
  return out;
}

// Moving average so the training curve is readable.
std::vector<double> smoothed(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

void loss_plot(const fs::path& p, const std::string& title, const std::vector<double>& losses, const char* x) {
  Series raw{"loss", {}, {}}, avg{"moving average", {}, {}};
  const auto sm = smoothed(losses, 50);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    raw.x.push_back(static_cast<double>(i + 1));
    raw.y.push_back(losses[i]);
    avg.x.push_back(static_cast<double>(i + 1));
    avg.y.push_back(sm[i]);
  }
  write_svg_plot(p, title, x, "loss", {raw, avg});
}

}  // namespace

// ---------------------------------------------------------------- encodings

nn::Tensor encode_norf(const geometry::NorfMap& m) {
  const std::size_t n = static_cast<std::size_t>(m.size) * m.size;
  nn::Tensor t({6, static_cast<std::size_t>(m.size), static_cast<std::size_t>(m.size)});
  for (std::size_t i = 0; i < n; ++i) {
    if (!m.mask[i]) continue;
    for (int c = 0; c < 3; ++c) {
      t[c * n + i] = 2.0 * m.coords[3 * i + c];
      t[(3 + c) * n + i] = m.normals[3 * i + c];
    }
  }
  return t;
}

geometry::NorfMap decode_norf(const nn::Tensor& state, std::size_t index, std::span<const std::uint8_t> mask,
                              const geometry::Camera& cam) {
  if (state.rank() != 4 || state.dim(1) != 6 || state.dim(2) != state.dim(3) || index >= state.dim(0))
    throw ShapeError("NORF state " + nn::shape_string(state.shape()));
  const int d = static_cast<int>(state.dim(2));
  const std::size_t n = static_cast<std::size_t>(d) * d;
  if (mask.size() != n) throw ShapeError("mask does not match the NORF state");
  geometry::NorfMap m(d);
  m.camera = cam;
  const double* s = state.ptr() + index * 6 * n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    Vec3 nv(s[3 * n + i], s[4 * n + i], s[5 * n + i]);
    const double len = nv.norm();
    if (!(len > 1e-6)) continue;
    nv /= len;
    for (int c = 0; c < 3; ++c) {
      m.coords[3 * i + c] = std::clamp(0.5 * s[c * n + i], -0.5, 0.5);
      m.normals[3 * i + c] = nv[c];
    }
    m.mask[i] = 1;
  }
  return m;
}

nn::Tensor encode_observation(const geometry::Observation& o, bool with_normals) {
  const std::size_t n = static_cast<std::size_t>(o.size) * o.size;
  nn::Tensor t({4, static_cast<std::size_t>(o.size), static_cast<std::size_t>(o.size)});
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = o.mask[i] ? 2.0 * o.image[i] - 1.0 : -1.0;
    if (with_normals && o.mask[i])
      for (int c = 0; c < 3; ++c) t[(1 + c) * n + i] = o.normals[3 * i + c];
  }
  return t;
}

nn::Tensor channels_first(const nn::Tensor& hwc) {
  if (hwc.rank() != 3) throw ShapeError("expected [H, W, C], got " + nn::shape_string(hwc.shape()));
  const std::size_t h = hwc.dim(0), w = hwc.dim(1), c = hwc.dim(2);
  nn::Tensor out({c, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) out[(k * h + y) * w + x] = hwc[(y * w + x) * c + k];
  return out;
}

nn::Tensor channels_last(const nn::Tensor& chw) {
  if (chw.rank() != 3) throw ShapeError("expected [C, H, W], got " + nn::shape_string(chw.shape()));
  const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  nn::Tensor out({h, w, c});
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(y * w + x) * c + k] = chw[(k * h + y) * w + x];
  return out;
}

diffusion::NoiseSchedule make_schedule(const RunConfig& cfg) {
  return diffusion::NoiseSchedule::linear(static_cast<long>(cfg.diffusion.T), cfg.diffusion.beta_start, cfg.diffusion.beta_end);
}

std::string to_string(Stage s) { return s == Stage::Norf ? "norf" : "shape"; }

Stage stage_from_string(const std::string& s) {
  if (s == "norf") return Stage::Norf;
  if (s == "shape") return Stage::Shape;
  throw UsageError("unknown stage '" + s + "' (norf or shape)");
}

diffusion::ConvDenoiserConfig denoiser_config(const RunConfig& cfg, Stage stage) {
  const auto& spec = stage == Stage::Norf ? cfg.diffusion.norf : cfg.diffusion.shape;
  diffusion::ConvDenoiserConfig c;
  if (stage == Stage::Norf) {
    c.state_channels = 6;
    c.cond_channels = 4;
    c.size = static_cast<std::size_t>(cfg.dataset.d);
  } else {
    c.state_channels = 3 * cfg.triplane.n;
    c.cond_channels = conditioning::kOrthoChannels;
    c.size = std::size_t{1} << cfg.triplane.p;
  }
  c.widths = spec.widths;
  c.time_freqs = spec.time_freqs;
  c.time_width = spec.time_width;
  c.seed = derive_seed(cfg.seed, 20, stage == Stage::Norf ? 0 : 1);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- dataset and triplanes

json cmd_gen_dataset(const RunConfig& cfg) { return generate_dataset(cfg, RunPaths{cfg.output}.dataset()); }

json cmd_fit_triplanes(const RunConfig& cfg) {
  cfg.validate();
  const RunPaths paths{cfg.output};
  const Dataset ds = load_dataset(paths.dataset());
  std::vector<triplane::SdfSampleSet> samples;
  for (std::size_t i = 0; i < ds.objects.size(); ++i) samples.push_back(ds.samples(i));

  triplane::FitConfig fc;
  fc.lod = cfg.triplane.p;
  fc.latent_dim = cfg.triplane.n;
  fc.hidden = cfg.triplane.hidden;
  fc.alpha_tv = cfg.triplane.alpha_tv;
  fc.points_per_epoch = cfg.triplane.points_per_epoch;
  fc.train = cfg.triplane.train;
  fc.train.seed = derive_seed(cfg.seed, 10);
  const auto lib = triplane::fit_triplanes(samples, fc);
  const auto ref_std = triplane::channel_std(lib.triplanes);

  const fs::path dir = paths.triplanes();
  make_dirs(dir);
  json files = json::array(), objects = json::array();
  lib.decoder.save(dir / "decoder.nnc");
  add_file(files, cfg.output, dir / "decoder.nnc");
  const auto decoder = nn::Mlp::load(dir / "decoder.nnc");  // what later stages see
  for (std::size_t i = 0; i < ds.objects.size(); ++i) {
    const fs::path p = dir / (ds.objects[i].id + ".tpl");
    triplane::save_triplane(p, lib.triplanes[i], ref_std);
    add_file(files, cfg.output, p);
    const auto z = triplane::load_triplane(p).triplane;
    const auto pred = triplane::decode_sdf_batch(decoder, z, samples[i].points);
    double err = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) err += std::fabs(pred[k] - samples[i].distances[k]);
    objects.push_back({{"id", ds.objects[i].id}, {"mean_abs_error", err / static_cast<double>(pred.size())}});
  }
  write_loss_csv(dir / "loss.csv", lib.epoch_losses, "epoch");
  loss_plot(dir / "loss.svg", "triplane fitting", lib.epoch_losses, "epoch");
  add_file(files, cfg.output, dir / "loss.csv");
  add_file(files, cfg.output, dir / "loss.svg");
  const json manifest{{"kind", "triplanes"},      {"config_hash", config_hash(cfg)}, {"dataset_hash", dataset_hash(cfg)},
                      {"final_loss", lib.final_loss}, {"ref_std", ref_std},            {"objects", objects},
                      {"files", files}};
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

// ---------------------------------------------------------------- denoiser training

namespace {

struct NorfPair {
  geometry::Observation obs;
  geometry::NorfMap norf;
};

diffusion::BatchSource norf_source(const RunConfig& cfg, std::shared_ptr<const std::vector<NorfPair>> data) {
  const auto aug = cfg.dataset.augment;
  return [data, aug](Rng& rng, std::size_t batch, nn::Tensor& u0, nn::Tensor& cond) {
    const std::size_t d = static_cast<std::size_t>(data->front().obs.size);
    u0 = nn::Tensor({batch, 6, d, d});
    cond = nn::Tensor({batch, 4, d, d});
    for (std::size_t b = 0; b < batch; ++b) {
      NorfPair p = (*data)[rng.index(data->size())];
      geometry::augment_pair(p.obs, p.norf, aug, rng);
      const auto s = encode_norf(p.norf).reshaped({1, 6, d, d});
      const auto c = encode_observation(p.obs, true).reshaped({1, 4, d, d});
      copy_tensor_sample(s, 0, u0, b);
      copy_tensor_sample(c, 0, cond, b);
    }
  };
}

struct ShapePair {
  nn::Tensor ortho;   // [48, R, R]
  nn::Tensor target;  // [3n, R, R], normalised
};

diffusion::BatchSource shape_source(std::shared_ptr<const std::vector<ShapePair>> data) {
  return [data](Rng& rng, std::size_t batch, nn::Tensor& u0, nn::Tensor& cond) {
    const auto& f = data->front();
    u0 = nn::Tensor({batch, f.target.dim(0), f.target.dim(1), f.target.dim(2)});
    cond = nn::Tensor({batch, f.ortho.dim(0), f.ortho.dim(1), f.ortho.dim(2)});
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& p = (*data)[rng.index(data->size())];
      std::copy(p.target.vec().begin(), p.target.vec().end(), u0.ptr() + b * p.target.size());
      std::copy(p.ortho.vec().begin(), p.ortho.vec().end(), cond.ptr() + b * p.ortho.size());
    }
  };
}

}  // namespace

json cmd_train_denoiser(const RunConfig& cfg, Stage stage, const TrainOptions& opt) {
  cfg.validate();
  const RunPaths paths{cfg.output};
  const Dataset ds = load_dataset(paths.dataset());
  const auto& spec = stage == Stage::Norf ? cfg.diffusion.norf : cfg.diffusion.shape;

  diffusion::BatchSource source;
  diffusion::DenoiserTrainConfig tc;
  tc.train = spec.train;
  tc.train.seed = derive_seed(cfg.seed, 21, stage == Stage::Norf ? 0 : 1);
  json inputs{{"dataset_hash", dataset_hash(cfg)}};
  std::size_t skipped = 0;
  if (stage == Stage::Norf) {
    auto data = std::make_shared<std::vector<NorfPair>>();
    for (const auto& v : ds.train) data->push_back({ds.observation(v, false), ds.norf(v, false)});
    source = norf_source(cfg, data);
    tc.drops = {{1, 3, spec.drop_prob}};
  } else {
    const auto tmanifest = read_json(paths.triplanes() / "manifest.json");
    if (tmanifest.at("dataset_hash") != inputs["dataset_hash"])
      throw ValidationError("triplanes were fitted on a different dataset");
    verify_files(cfg.output, tmanifest.at("files"));
    inputs["triplanes_hash"] = io::file_hash(paths.triplanes() / "manifest.json");
    std::vector<nn::Tensor> targets;
    for (const auto& o : ds.objects) {
      const auto t = triplane::load_triplane(paths.triplanes() / (o.id + ".tpl"));
      targets.push_back(channels_first(triplane::to_image_layout(triplane::normalize_triplane(t.triplane, t.ref_std))));
    }
    auto data = std::make_shared<std::vector<ShapePair>>();
    for (const auto& v : ds.train) {
      try {
        data->push_back({channels_first(conditioning::ortho_norf(ds.norf(v, false), cfg.triplane.p)), targets[v.object]});
      } catch (const InsufficientEvidenceError&) {
        ++skipped;
      }
    }
    if (data->empty()) throw InsufficientEvidenceError("no training view has enough NORF points");
    source = shape_source(data);
    tc.drops = {{0, std::numeric_limits<std::size_t>::max(), spec.drop_prob}};
  }

  const fs::path dir = paths.stage(stage);
  make_dirs(dir);
  diffusion::ConvDenoiser den(denoiser_config(cfg, stage));
  const auto sched = make_schedule(cfg);
  diffusion::DenoiserTrainer trainer(den, sched, source, tc);
  std::vector<double> losses;
  const fs::path ckpt = dir / "checkpoint.trs", ckpt_info = dir / "checkpoint.json";
  const std::string chash = config_hash(cfg);
  if (opt.resume && fs::exists(ckpt)) {
    const auto info = read_json(ckpt_info);
    if (info.at("config_hash") != chash) throw ValidationError("checkpoint belongs to a different configuration");
    trainer.restore(nn::TrainingState::load(ckpt));
    losses = read_loss_csv(dir / "loss.csv");
    const auto step = static_cast<std::size_t>(trainer.steps_taken());
    if (losses.size() < step) throw ValidationError("loss history shorter than the checkpoint");
    losses.resize(step);
  }
  auto save_checkpoint = [&] {
    trainer.state().save(ckpt);
    write_json(ckpt_info, {{"config_hash", chash}, {"step", trainer.steps_taken()}});
    write_loss_csv(dir / "loss.csv", losses, "step");
  };
  long done_here = 0;
  while (!trainer.done() && (opt.stop_after <= 0 || done_here < opt.stop_after)) {
    losses.push_back(trainer.step());
    ++done_here;
    if (spec.checkpoint_every > 0 && trainer.steps_taken() % static_cast<long>(spec.checkpoint_every) == 0) save_checkpoint();
  }
  save_checkpoint();
  json manifest{{"kind", "denoiser"}, {"stage", to_string(stage)}, {"config_hash", chash}, {"inputs", inputs},
                {"steps", trainer.steps_taken()}, {"skipped_views", skipped}};
  if (!trainer.done()) {
    manifest["complete"] = false;
    return manifest;
  }
  den.save(dir / "denoiser.dns");
  loss_plot(dir / "loss.svg", to_string(stage) + " denoiser", losses, "step");
  const auto tail = std::span(losses).last(std::min<std::size_t>(losses.size(), 100));
  json files = json::array();
  for (const char* f : {"denoiser.dns", "loss.csv", "loss.svg"}) add_file(files, cfg.output, dir / f);
  manifest["complete"] = true;
  manifest["final_loss"] = metrics::mean_std(tail).mean;
  manifest["files"] = files;
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

// ---------------------------------------------------------------- estimation

Models load_models(const RunConfig& cfg) {
  const RunPaths paths{cfg.output};
  Models m;
  m.schedule = make_schedule(cfg);
  const std::string chash = config_hash(cfg);
  for (Stage s : {Stage::Norf, Stage::Shape}) {
    const auto man = read_json(paths.stage(s) / "manifest.json");
    if (man.at("config_hash") != chash) throw ValidationError(to_string(s) + " model was trained under a different configuration");
    verify_files(cfg.output, man.at("files"));
    (s == Stage::Norf ? m.norf : m.shape) = diffusion::load_denoiser(paths.stage(s) / "denoiser.dns");
  }
  const auto tman = read_json(paths.triplanes() / "manifest.json");
  verify_files(cfg.output, tman.at("files"));
  m.decoder = nn::Mlp::load(paths.triplanes() / "decoder.nnc");
  m.ref_std = tman.at("ref_std").get<std::vector<double>>();
  m.p = cfg.triplane.p;
  m.n = cfg.triplane.n;
  if (m.ref_std.size() != 3 * m.n || m.decoder.input_width() != 3 * m.n)
    throw ValidationError("triplane artifacts do not match the configured latent width");
  return m;
}

DepthView depth_of(const geometry::NorfMap& m) { return {m.depth, m.mask, m.camera}; }

Estimate estimate(const Models& models, const RunConfig& cfg, const geometry::Observation& obs,
                  const std::optional<DepthView>& depth, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw UsageError("at least one hypothesis is needed");
  obs.validate();
  const std::size_t d = static_cast<std::size_t>(obs.size);
  if (models.norf->state_shape() != nn::Shape{6, d, d})
    throw ShapeError("observation size " + std::to_string(d) + " does not match the NORF model");
  if (depth && (depth->mask.size() != d * d || depth->depth.size() != d * d))
    throw ShapeError("depth image does not match the observation");

  const auto& ns = cfg.diffusion.norf;
  const auto& ss = cfg.diffusion.shape;
  const auto cond1 = encode_observation(obs, cfg.eval.use_normals).reshaped({1, 4, d, d});
  diffusion::SampleRun r1{derive_seed(seed, 0), ns.solver, static_cast<long>(ns.sample_steps), ns.cfg_weight, ""};
  const auto states = diffusion::run_sampler(*models.norf, cond1, models.schedule, r1, n);

  geometry::Camera cam;
  if (depth) {
    cam = depth->camera;
  } else {
    cam.size = obs.size;
    cam.cx = cam.cy = 0.5 * obs.size;
  }

  Estimate e;
  e.hypotheses.resize(n);
  const std::size_t r = std::size_t{1} << models.p;
  nn::Tensor cond2({n, conditioning::kOrthoChannels, r, r});
  for (std::size_t h = 0; h < n; ++h) {
    auto& hy = e.hypotheses[h];
    hy.norf = decode_norf(states, h, obs.mask, cam);
    if (depth)
      for (std::size_t i = 0; i < d * d; ++i)
        if (hy.norf.mask[i]) hy.norf.depth[i] = depth->depth[i];
    try {
      hy.ortho = conditioning::ortho_norf(hy.norf, models.p);
      copy_tensor_sample(channels_first(hy.ortho).reshaped({1, conditioning::kOrthoChannels, r, r}), 0, cond2, h);
    } catch (const InsufficientEvidenceError&) {
      hy.status = "insufficient_evidence";
    }
  }

  diffusion::SampleRun r2{derive_seed(seed, 1), ss.solver, static_cast<long>(ss.sample_steps), ss.cfg_weight, ""};
  const auto shapes = diffusion::run_sampler(*models.shape, cond2, models.schedule, r2, n);
  const std::size_t c = 3 * models.n;
  for (std::size_t h = 0; h < n; ++h) {
    auto& hy = e.hypotheses[h];
    if (hy.status != "ok") continue;
    nn::Tensor img({c, r, r});
    std::copy_n(shapes.ptr() + h * img.size(), img.size(), img.ptr());
    hy.triplane = triplane::denormalize_triplane(triplane::from_image_layout(channels_last(img), models.n), models.ref_std);
    hy.mesh = surface::extract_surface(models.decoder, hy.triplane, cfg.eval.lod);
    if (hy.mesh.faces.empty()) {
      hy.status = "empty_mesh";
      continue;
    }
    if (!depth) continue;
    const auto pts = conditioning::filter_points(hy.norf);
    const auto corr = registration::pair_by_pixel(pts.points, pts.pixels, depth->depth, depth->mask, depth->camera);
    try {
      if (corr.size() < 3) throw RegistrationFailedError("fewer than 3 correspondences");
      registration::RansacConfig rc;
      rc.threshold = registration::default_threshold(corr.scene) * cfg.eval.threshold_fraction / registration::kThresholdFraction;
      rc.iterations = cfg.eval.ransac_iterations;
      rc.seed = derive_seed(seed, 2, h);
      hy.registration = registration::ransac_register(corr, rc);
      hy.registered = true;
    } catch (const RegistrationFailedError&) {
      hy.status = "registration_failed";
    } catch (const RankError&) {
      hy.status = "registration_failed";
    }
  }
  if (depth) {
    std::vector<registration::HypothesisScore> scores;
    for (const auto& hy : e.hypotheses)
      scores.push_back(hy.registered ? registration::HypothesisScore{hy.registration.inlier_count, hy.registration.mean_residual}
                                     : registration::HypothesisScore{0, std::numeric_limits<double>::infinity()});
    e.selected = registration::select_hypothesis(scores);
  }
  return e;
}

void write_estimate(const fs::path& dir, const Estimate& e, const Models& models, json& files, const fs::path& root) {
  make_dirs(dir);
  json hyps = json::array();
  for (std::size_t h = 0; h < e.hypotheses.size(); ++h) {
    const auto& hy = e.hypotheses[h];
    const fs::path hd = dir / ("hyp_" + std::to_string(h));
    make_dirs(hd);
    geometry::save_norf_map(hd / "norf", hy.norf);
    add_file(files, root, hd / "norf.json");
    add_file(files, root, hd / "norf.bin");
    json hj{{"index", h}, {"status", hy.status}, {"registered", hy.registered}};
    if (!hy.ortho.empty()) {
      conditioning::save_ortho_norf(hd / "ortho.onf", hy.ortho);
      add_file(files, root, hd / "ortho.onf");
    }
    if (hy.triplane.lod > 0) {
      triplane::save_triplane(hd / "triplane.tpl", hy.triplane, models.ref_std);
      add_file(files, root, hd / "triplane.tpl");
    }
    if (!hy.mesh.faces.empty()) {
      geometry::write_ply(hd / "mesh.ply", hy.mesh);
      add_file(files, root, hd / "mesh.ply");
      hj["mesh"] = rel(hd / "mesh.ply", dir);
      hj["watertight"] = hy.mesh.is_watertight();
    }
    if (hy.registered) {
      write_json(hd / "registration.json", registration::registration_to_json(hy.registration));
      add_file(files, root, hd / "registration.json");
      hj["registration"] = registration::registration_to_json(hy.registration);
    }
    hyps.push_back(hj);
  }
  json summary{{"hypotheses", hyps}};
  if (e.selected) summary["selected"] = *e.selected;
  write_json(dir / "estimate.json", summary);
  add_file(files, root, dir / "estimate.json");
}

namespace {

json model_hashes(const RunConfig& cfg) {
  const RunPaths paths{cfg.output};
  return {{"triplanes", io::file_hash(paths.triplanes() / "manifest.json")},
          {"norf", io::file_hash(paths.stage(Stage::Norf) / "manifest.json")},
          {"shape", io::file_hash(paths.stage(Stage::Shape) / "manifest.json")}};
}

void require_fresh(const fs::path& dir) {
  if (fs::exists(dir)) throw UsageError(dir.string() + " already exists; estimates are never overwritten, pick another name");
}

}  // namespace

json cmd_estimate_heldout(const RunConfig& cfg, const std::string& name) {
  cfg.validate();
  const RunPaths paths{cfg.output};
  const fs::path out = paths.estimates(name);
  require_fresh(out);
  const Dataset ds = load_dataset(paths.dataset());
  const Models models = load_models(cfg);
  make_dirs(out);
  json files = json::array(), entries = json::array();
  for (std::size_t vi = 0; vi < ds.heldout.size(); ++vi) {
    const auto& v = ds.heldout[vi];
    const auto obs = ds.observation(v, true);
    const auto depth = depth_of(ds.norf(v, true));
    for (std::size_t s = 0; s < cfg.eval.seeds; ++s) {
      const auto e = estimate(models, cfg, obs, depth, cfg.eval.hypotheses, derive_seed(cfg.seed, 30, vi, s));
      const std::string sub = v.id + "/seed_" + std::to_string(s);
      write_estimate(out / sub, e, models, files, cfg.output);
      entries.push_back({{"view", v.id}, {"seed", s}, {"dir", sub}});
    }
  }
  const json manifest{{"kind", "estimates"},      {"config_hash", config_hash(cfg)},
                      {"dataset_hash", dataset_hash(cfg)}, {"models", model_hashes(cfg)},
                      {"hypotheses", cfg.eval.hypotheses}, {"entries", entries},
                      {"files", files}};
  write_json(out / "manifest.json", manifest);
  return manifest;
}

json cmd_estimate_one(const RunConfig& cfg, const fs::path& observation, const std::optional<fs::path>& depth_base,
                      std::size_t n, std::uint64_t seed, const fs::path& out) {
  cfg.validate();
  require_fresh(out);
  const auto obs = geometry::load_observation(observation);
  std::optional<DepthView> depth;
  if (depth_base) depth = depth_of(geometry::load_norf_map(*depth_base));
  const Models models = load_models(cfg);
  const auto e = estimate(models, cfg, obs, depth, n, seed);
  make_dirs(out);
  json files = json::array();
  write_estimate(out, e, models, files, out);
  const json manifest{{"kind", "estimate"}, {"config_hash", config_hash(cfg)}, {"models", model_hashes(cfg)},
                      {"seed", seed},       {"hypotheses", n},                 {"files", files}};
  write_json(out / "manifest.json", manifest);
  return manifest;
}

// ---------------------------------------------------------------- evaluation

json cmd_eval(const RunConfig& cfg, const std::string& estimates) {
  cfg.validate();
  const RunPaths paths{cfg.output};
  const Dataset ds = load_dataset(paths.dataset());
  const fs::path edir = paths.estimates(estimates);
  const auto man = read_json(edir / "manifest.json");
  if (man.value("kind", "") != "estimates") throw ValidationError(edir.string() + " holds no held-out estimates");
  if (man.at("dataset_hash") != dataset_hash(cfg)) throw ValidationError("estimates were made from a different dataset");
  if (man.at("config_hash") != config_hash(cfg)) throw ValidationError("estimates were made under a different configuration");
  verify_files(cfg.output, man.at("files"));
  const auto& proto = cfg.eval.protocol;
  proto.validate();

  std::map<std::string, std::size_t> view_index;
  for (std::size_t i = 0; i < ds.heldout.size(); ++i) view_index[ds.heldout[i].id] = i;

  std::vector<metrics::ObjectEval> objects;
  json rows = json::array();
  std::map<std::string, std::size_t> status_counts;
  for (const auto& entry : man.at("entries")) {
    const std::string vid = entry.at("view").get<std::string>();
    const auto it = view_index.find(vid);
    if (it == view_index.end()) throw ValidationError("estimate for unknown view " + vid);
    const auto& v = ds.heldout[it->second];
    const auto seed = entry.at("seed").get<std::size_t>();
    const auto& obj = ds.objects[v.object];

    Rng grng(derive_seed(cfg.seed, 40, it->second, seed));
    const auto gt_norf = geometry::sample_surface(obj.shape, proto.n_points, grng);
    std::vector<Vec3> gt_world;
    for (const auto& p : gt_norf) gt_world.push_back(obj.shape.to_world.apply(p));
    // Fallback for hypotheses without a registered shape: the visible surface itself.
    const auto gm = ds.norf(v, true);
    const auto bp = registration::back_project(gm.depth, gm.mask, gm.camera);
    std::vector<Vec3> observed;
    for (const auto& p : bp.points) observed.push_back(gm.camera.to_world(p));

    const fs::path sub = edir / entry.at("dir").get<std::string>();
    const auto est = read_json(sub / "estimate.json");
    metrics::ObjectEval oe;
    oe.scene = vid;
    oe.object = "seed_" + std::to_string(seed);
    for (const auto& hj : est.at("hypotheses")) {
      metrics::HypothesisEval he;
      const std::size_t h = hj.at("index").get<std::size_t>();
      ++status_counts[hj.at("status").get<std::string>()];
      std::vector<Vec3> pts = observed;
      if (hj.contains("mesh")) {
        const auto mesh = geometry::read_ply(sub / hj.at("mesh").get<std::string>());
        Rng mrng(derive_seed(cfg.seed, 41, it->second * 1000 + seed, h));
        const auto mp = metrics::sample_mesh_surface(mesh, proto.n_points, mrng);
        he.norf_chamfer = metrics::aligned_chamfer(mp, gt_norf, proto);
        if (hj.at("registered").get<bool>()) {
          const auto reg = registration::registration_from_json(hj.at("registration"));
          he.registered = true;
          he.inlier_count = reg.inlier_count;
          he.mean_residual = reg.mean_residual;
          pts.clear();
          for (const auto& p : mp) pts.push_back(reg.transform.apply(p));
        }
      }
      if (!he.registered) he.mean_residual = std::numeric_limits<double>::infinity();
      he.chamfer = metrics::chamfer_l1(pts, gt_world);
      he.fscore = metrics::fscore(pts, gt_world, proto.f_threshold);
      oe.hypotheses.push_back(he);
    }
    objects.push_back(std::move(oe));
  }
  if (objects.empty()) throw ValidationError("no estimates to evaluate");

  json report = metrics::eval_report(objects, proto);
  report["config_hash"] = config_hash(cfg);
  report["dataset_hash"] = dataset_hash(cfg);
  report["estimates_hash"] = io::file_hash(edir / "manifest.json");
  report["status_counts"] = status_counts;

  const fs::path out = paths.eval();
  make_dirs(out);
  write_json(out / "report.json", report);

  const auto& agg = report.at("aggregate");
  const auto om = agg.at("oracle_curve").at("mean").get<std::vector<double>>();
  const auto os = agg.at("oracle_curve").at("std").get<std::vector<double>>();
  const auto im = agg.at("inlier_curve").at("mean").get<std::vector<double>>();
  const auto is = agg.at("inlier_curve").at("std").get<std::vector<double>>();
  std::string csv = "n,oracle_mean,oracle_std,inlier_mean,inlier_std\n";
  Series so{"oracle best-of-N", {}, {}}, si{"most inliers of N", {}, {}};
  for (std::size_t k = 0; k < om.size(); ++k) {
    csv += std::to_string(k + 1) + "," + format_number(om[k]) + "," + format_number(os[k]) + "," + format_number(im[k]) + "," +
           format_number(is[k]) + "\n";
    so.x.push_back(static_cast<double>(k + 1));
    so.y.push_back(om[k]);
    si.x.push_back(static_cast<double>(k + 1));
    si.y.push_back(im[k]);
  }
  io::write_file(out / "curves.csv", csv);
  write_svg_plot(out / "best_of_n.svg", "Chamfer distance vs hypotheses", "hypotheses N", "Chamfer-L1", {so, si});

  std::string scsv = "scene,objects,first_chamfer,oracle_best,inlier_best\n";
  for (const auto& s : report.at("scenes")) {
    const auto oc = s.at("oracle_curve").get<std::vector<double>>();
    const auto ic = s.at("inlier_curve").get<std::vector<double>>();
    scsv += s.at("scene").get<std::string>() + "," + std::to_string(s.at("objects").get<std::size_t>()) + "," +
            format_number(s.at("first_chamfer").get<double>()) + "," + format_number(oc.back()) + "," +
            format_number(ic.back()) + "\n";
  }
  io::write_file(out / "scenes.csv", scsv);
  return report;
}

// ---------------------------------------------------------------- inspect

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string strip(const std::string& s, const std::string& suffix) { return s.substr(0, s.size() - suffix.size()); }

}  // namespace

std::string inspect(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("no such file " + path.string());
  const std::string p = path.string();
  std::ostringstream out;
  if (ends_with(p, ".norf.json") || ends_with(p, ".norf.bin") || ends_with(p, "norf.json")) {
    const std::string base = ends_with(p, ".json") ? strip(p, ".json") : strip(p, ".bin");
    const auto m = geometry::load_norf_map(base);
    m.validate();
    out << "NORF map " << m.size << "x" << m.size << ", " << m.hit_count() << " foreground pixels\n";
  } else if (ends_with(p, ".obs.json") || ends_with(p, ".obs.bin")) {
    const std::string base = ends_with(p, ".json") ? strip(p, ".json") : strip(p, ".bin");
    const auto o = geometry::load_observation(base);
    o.validate();
    std::size_t fg = 0;
    for (auto v : o.mask) fg += v;
    out << "observation " << o.size << "x" << o.size << ", " << fg << " foreground pixels\n";
  } else if (ends_with(p, ".tpl")) {
    const auto t = triplane::load_triplane(path);
    t.triplane.validate();
    out << "triplane lod " << t.triplane.lod << " (" << t.triplane.resolution() << "^2), latent " << t.triplane.latent_dim
        << "\n";
  } else if (ends_with(p, ".onf")) {
    const auto t = conditioning::load_ortho_norf(path);
    out << "ortho NORF " << nn::shape_string(t.shape()) << "\n";
  } else if (ends_with(p, ".dns")) {
    const auto d = diffusion::load_denoiser(path);
    std::size_t count = 0;
    for (const auto& v : d->parameters()) count += v.value().size();
    out << "denoiser " << d->flavor() << ", state " << nn::shape_string(d->state_shape()) << ", " << count << " parameters\n";
  } else if (ends_with(p, ".trs")) {
    const auto s = nn::TrainingState::load(path);
    out << "training state at step " << s.adam.step << ", " << s.params.size() << " tensors\n";
  } else if (ends_with(p, ".nnc")) {
    const auto m = nn::Mlp::load(path);
    out << "MLP widths";
    for (auto w : m.widths()) out << " " << w;
    out << "\n";
  } else if (ends_with(p, ".ply")) {
    const auto m = geometry::read_ply(path);
    m.validate();
    out << "mesh " << m.vertices.size() << " vertices, " << m.faces.size() << " faces, area " << format_number(m.surface_area())
        << (m.is_watertight() ? ", watertight" : ", open") << "\n";
  } else if (ends_with(p, ".sdf")) {
    const auto s = load_sdf_samples(path);
    out << "SDF samples: " << s.size() << "\n";
  } else if (ends_with(p, ".json")) {
    const auto j = read_json(path);
    const std::string kind = j.value("kind", "");
    if (!kind.empty()) {
      out << kind << " manifest";
      if (j.contains("files")) {
        // File paths are relative to the manifest's directory or to the run directory above it.
        fs::path root = path.parent_path();
        const auto& files = j.at("files");
        if (!files.empty() && !fs::exists(root / files[0].at("path").get<std::string>())) root = root.parent_path();
        verify_files(root, files);
        out << ", " << j.at("files").size() << " files verified";
      }
      out << "\n";
    } else if (j.contains("aggregate")) {
      const auto om = j.at("aggregate").at("oracle_curve").at("mean");
      out << "eval report, " << j.at("aggregate").at("scene_count") << " scenes, oracle curve " << om.dump() << "\n";
    } else if (j.contains("seed")) {
      const auto c = config_from_json(j);
      c.validate();
      out << "run config '" << c.name << "', seed " << c.seed << "\n";
    } else {
      out << "JSON document with " << j.size() << " entries\n";
    }
  } else {
    throw ValidationError("unrecognised artifact " + p);
  }
  return out.str();
}

// ---------------------------------------------------------------- plots

std::string format_number(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_svg_plot(const fs::path& path, const std::string& title, const std::string& xlabel, const std::string& ylabel,
                    const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1e-9 + std::fabs(y0) * 0.1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << format_number(yv) << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << format_number(xv) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - B) / 2
    << ")\">" << ylabel << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 4];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size(); ++i)
      if (std::isfinite(series[s].y[i])) o << format_number(px(series[s].x[i])) << "," << format_number(py(series[s].y[i])) << " ";
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 150 << "\" y=\"" << T + 16 * (s + 1) << "\" fill=\"" << c << "\">" << series[s].name << "</text>\n";
  }
  o << "</svg>\n";
  io::write_file(path, o.str());
}

}  // namespace omnishape::pipeline
