#include <doctest.h>

#include <cmath>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"
#include "omnishape/pipeline/config.hpp"
#include "omnishape/pipeline/dataset.hpp"
#include "omnishape/pipeline/stages.hpp"

using namespace omnishape;
using namespace omnishape::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omnishape_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig smoke(const fs::path& out) {
  RunConfig c = preset("smoke");
  c.seed = 7;
  c.output = out;
  return c;
}

std::vector<std::uint8_t> bytes(const fs::path& p) { return io::read_file(p); }

// One trained smoke run shared by the estimation tests.
const RunConfig& trained_run() {
  static const RunConfig cfg = [] {
    RunConfig c = smoke(scratch("trained"));
    cmd_gen_dataset(c);
    cmd_fit_triplanes(c);
    cmd_train_denoiser(c, Stage::Norf);
    cmd_train_denoiser(c, Stage::Shape);
    return c;
  }();
  return cfg;
}

}  // namespace

TEST_CASE("NORF state encoding round-trips on the mask") {
  RunConfig c = smoke(scratch("unused"));
  const auto objects = make_objects(c);
  Rng rng(3);
  const auto v = random_view(c, objects[1], rng);
  const auto m = geometry::render_norf(objects[1].shape, v.camera);
  const auto s = encode_norf(m);
  CHECK(s.shape() == nn::Shape{6, 16, 16});
  const auto back = decode_norf(s.reshaped({1, 6, 16, 16}), 0, m.mask, m.camera);
  back.validate();
  CHECK(back.mask == m.mask);
  double err = 0.0;
  for (std::size_t i = 0; i < m.coords.size(); ++i) err = std::max(err, std::fabs(back.coords[i] - m.coords[i]));
  CHECK(err < 1e-12);

  // Pixels the sampler leaves without a normal direction drop out of the mask.
  auto z = s;
  for (std::size_t c3 = 3; c3 < 6; ++c3) z[c3 * 256 + 0] = 0.0;
  std::vector<std::uint8_t> all(256, 1);
  const auto dz = decode_norf(z.reshaped({1, 6, 16, 16}), 0, all, m.camera);
  CHECK(dz.mask[0] == 0);
  dz.validate();
}

TEST_CASE("observation encoding and channel layout") {
  geometry::Observation o(4);
  o.mask[5] = 1;
  o.image[5] = 0.75;
  o.normals[15] = 1.0;
  const auto t = encode_observation(o, true);
  CHECK(t[5] == doctest::Approx(0.5));
  CHECK(t[0] == -1.0);
  CHECK(t[16 + 5] == 1.0);
  const auto t0 = encode_observation(o, false);
  CHECK(t0[16 + 5] == 0.0);

  nn::Tensor hwc({3, 2, 5});
  for (std::size_t i = 0; i < hwc.size(); ++i) hwc[i] = static_cast<double>(i);
  const auto chw = channels_first(hwc);
  CHECK(chw.shape() == nn::Shape{5, 3, 2});
  CHECK(chw[(4 * 3 + 2) * 2 + 1] == hwc[(2 * 2 + 1) * 5 + 4]);
  CHECK(channels_last(chw).vec() == hwc.vec());
}

TEST_CASE("config JSON round trip, overrides and mandatory seed") {
  const RunConfig c = smoke("x");
  const auto j = config_to_json(c);
  CHECK(config_to_json(config_from_json(j)) == j);
  auto tree = j;
  apply_override(tree, "eval.hypotheses=5");
  apply_override(tree, "name=renamed");
  const auto c2 = config_from_json(tree);
  CHECK(c2.eval.hypotheses == 5);
  CHECK(c2.name == "renamed");
  tree.erase("seed");
  CHECK_THROWS_AS(config_from_json(tree), ValidationError);
  CHECK(config_hash(c) == config_hash(smoke("elsewhere")));
  auto c3 = c;
  c3.seed = 8;
  CHECK(config_hash(c) != config_hash(c3));
}

TEST_CASE("dataset: view counts, stable manifests, tamper detection") {
  const RunConfig a = smoke(scratch("ds_a")), b = smoke(scratch("ds_b"));
  const auto ma = cmd_gen_dataset(a);
  cmd_gen_dataset(b);
  CHECK(ma.at("train").size() == a.dataset.objects * a.dataset.views);
  CHECK(ma.at("heldout").size() == a.dataset.heldout_views);
  CHECK(bytes(a.output / "dataset/manifest.json") == bytes(b.output / "dataset/manifest.json"));

  const auto ds = load_dataset(a.output / "dataset");
  CHECK(ds.train.size() == a.dataset.objects * a.dataset.views);
  for (const auto& v : ds.heldout) {
    CHECK(v.iou >= a.dataset.ambiguity_iou);
    ds.norf(v, true).validate();
  }

  io::write_file(a.output / "dataset/objects/obj00.sdf", "tampered");
  CHECK_THROWS_AS(load_dataset(a.output / "dataset"), ValidationError);
}

TEST_CASE("interrupted training resumes to the same model") {
  const RunConfig a = smoke(scratch("train_a")), b = smoke(scratch("train_b"));
  cmd_gen_dataset(a);
  cmd_gen_dataset(b);
  const auto full = cmd_train_denoiser(a, Stage::Norf);
  CHECK(full.at("complete").get<bool>());

  const auto part = cmd_train_denoiser(b, Stage::Norf, {.resume = false, .stop_after = 3});
  CHECK_FALSE(part.at("complete").get<bool>());
  CHECK(part.at("steps").get<long>() == 3);
  CHECK_FALSE(fs::exists(b.output / "norf_model/denoiser.dns"));
  const auto rest = cmd_train_denoiser(b, Stage::Norf, {.resume = true, .stop_after = 0});
  CHECK(rest.at("complete").get<bool>());
  CHECK(bytes(a.output / "norf_model/denoiser.dns") == bytes(b.output / "norf_model/denoiser.dns"));
  CHECK(bytes(a.output / "norf_model/loss.csv") == bytes(b.output / "norf_model/loss.csv"));

  // A checkpoint from another configuration is refused.
  RunConfig other = b;
  other.seed = 99;
  CHECK_THROWS_AS(cmd_train_denoiser(other, Stage::Norf, {.resume = true, .stop_after = 1}), ValidationError);
}

TEST_CASE("estimation: hypothesis count, seeds, per-hypothesis streams") {
  const RunConfig& cfg = trained_run();
  const auto models = load_models(cfg);
  const auto ds = load_dataset(cfg.output / "dataset");
  const auto& v = ds.heldout[0];
  const auto obs = ds.observation(v, true);
  const auto depth = depth_of(ds.norf(v, true));

  const auto one = estimate(models, cfg, obs, depth, 1, 11);
  REQUIRE(one.hypotheses.size() == 1);
  REQUIRE(one.selected.has_value());
  CHECK(*one.selected == 0);

  const auto three = estimate(models, cfg, obs, depth, 3, 11);
  const auto again = estimate(models, cfg, obs, depth, 3, 11);
  REQUIRE(three.hypotheses.size() == 3);
  for (std::size_t h = 0; h < 3; ++h) {
    CHECK(three.hypotheses[h].norf.coords == again.hypotheses[h].norf.coords);
    CHECK(three.hypotheses[h].status == again.hypotheses[h].status);
    CHECK(three.hypotheses[h].mesh.vertices.size() == again.hypotheses[h].mesh.vertices.size());
  }
  // Hypothesis 0 does not depend on how many are drawn with it.
  CHECK(three.hypotheses[0].norf.coords == one.hypotheses[0].norf.coords);
  CHECK(three.hypotheses[0].status == one.hypotheses[0].status);
  for (const auto& h : three.hypotheses) {
    h.norf.validate();
    for (std::size_t i = 0; i < h.norf.mask.size(); ++i)
      if (h.norf.mask[i]) CHECK(obs.mask[i]);
  }

  // Without depth nothing is registered or selected.
  const auto nodepth = estimate(models, cfg, obs, std::nullopt, 2, 11);
  CHECK_FALSE(nodepth.selected.has_value());
  for (const auto& h : nodepth.hypotheses) CHECK_FALSE(h.registered);

  CHECK_THROWS_AS(estimate(models, cfg, obs, depth, 0, 11), UsageError);
  CHECK_THROWS_AS(estimate(models, cfg, geometry::Observation(8), std::nullopt, 1, 11), ShapeError);
}

TEST_CASE("estimates are never overwritten and eval checks provenance") {
  const RunConfig& cfg = trained_run();
  fs::remove_all(cfg.output / "est_t");
  const auto m = cmd_estimate_heldout(cfg, "est_t");
  CHECK(m.at("entries").size() == cfg.dataset.heldout_views * cfg.eval.seeds);
  CHECK_THROWS_AS(cmd_estimate_heldout(cfg, "est_t"), UsageError);

  const auto r = cmd_eval(cfg, "est_t");
  const auto oracle = r.at("aggregate").at("oracle_curve").at("mean").get<std::vector<double>>();
  const auto inlier = r.at("aggregate").at("inlier_curve").at("mean").get<std::vector<double>>();
  REQUIRE(oracle.size() == cfg.eval.hypotheses);
  for (std::size_t k = 0; k < oracle.size(); ++k) {
    CHECK(inlier[k] >= oracle[k]);
    if (k > 0) CHECK(oracle[k] <= oracle[k - 1]);
  }
  const auto report = bytes(cfg.output / "eval/report.json");
  cmd_eval(cfg, "est_t");
  CHECK(bytes(cfg.output / "eval/report.json") == report);
  CHECK(fs::exists(cfg.output / "eval/curves.csv"));
  CHECK(fs::exists(cfg.output / "eval/best_of_n.svg"));

  RunConfig changed = cfg;
  changed.eval.protocol.n_points = 300;
  CHECK_THROWS_AS(cmd_eval(changed, "est_t"), ValidationError);
  CHECK_THROWS_AS(cmd_eval(cfg, "no_such_estimates"), ValidationError);
}

TEST_CASE("single-observation estimate writes one directory per hypothesis") {
  const RunConfig& cfg = trained_run();
  const fs::path out = cfg.output / "single";
  fs::remove_all(out);
  const auto ds = load_dataset(cfg.output / "dataset");
  const fs::path base = cfg.output / "dataset/heldout" / (ds.heldout[0].id + ".obs");
  const fs::path depth = cfg.output / "dataset/heldout" / (ds.heldout[0].id + ".norf");
  cmd_estimate_one(cfg, base, depth, 1, 3, out);
  CHECK(fs::exists(out / "hyp_0/norf.json"));
  CHECK_FALSE(fs::exists(out / "hyp_1"));
  CHECK_THROWS_AS(cmd_estimate_one(cfg, base, depth, 1, 3, out), UsageError);
  CHECK(inspect(out / "manifest.json").find("verified") != std::string::npos);
}

TEST_CASE("inspect validates artifacts") {
  const RunConfig& cfg = trained_run();
  CHECK(inspect(cfg.output / "dataset/manifest.json").find("dataset") != std::string::npos);
  CHECK(inspect(cfg.output / "triplanes/obj00.tpl").find("triplane") != std::string::npos);
  CHECK(inspect(cfg.output / "norf_model/denoiser.dns").find("denoiser") != std::string::npos);
  CHECK(inspect(cfg.output / "shape_model/checkpoint.trs").find("step") != std::string::npos);
  const fs::path bad = cfg.output / "broken.tpl";
  io::write_file(bad, "nope");
  CHECK_THROWS(inspect(bad));
  CHECK_THROWS_AS(inspect(cfg.output / "missing.ply"), ValidationError);
  CHECK_THROWS_AS(inspect(cfg.output / "dataset/objects"), ValidationError);
}

TEST_CASE("plot and number formatting") {
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
  const fs::path p = scratch("plot.svg");
  write_svg_plot(p, "t", "x", "y", {{"a", {1, 2, 3}, {3, 2, 1}}, {"b", {1, 2}, {1, std::nan("")}}});
  const auto b = bytes(p);
  const std::string s(b.begin(), b.end());
  CHECK(s.find("<polyline") != std::string::npos);
  CHECK(s.find("</svg>") != std::string::npos);
}
