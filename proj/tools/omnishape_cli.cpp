#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omnishape/core/binary_io.hpp"
#include "omnishape/core/error.hpp"
#include "omnishape/core/json_io.hpp"
#include "omnishape/pipeline/config.hpp"
#include "omnishape/pipeline/stages.hpp"

namespace fs = std::filesystem;
using namespace omnishape;
using namespace omnishape::pipeline;

namespace {

struct ConfigOptions {
  std::string config_path;
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  std::string out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "run configuration (JSON)");
    app->add_option("--preset", preset, "preset when no --config is given: desk, smoke, reference");
    app->add_option("--seed", seed, "base seed (overrides the configuration)");
    app->add_option("--set", overrides, "override a setting, e.g. --set eval.hypotheses=4")->take_all();
    app->add_option("--out", out, "run directory (overrides the configuration)");
  }

  RunConfig resolve() const {
    nlohmann::json tree;
    if (!config_path.empty()) {
      const auto bytes = io::read_file(config_path);
      try {
        tree = nlohmann::json::parse(bytes.begin(), bytes.end());
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(config_path + ": " + e.what());
      }
    } else {
      tree = config_to_json(pipeline::preset(preset));
    }
    for (const auto& o : overrides) apply_override(tree, o);
    if (seed) tree["seed"] = *seed;
    if (!out.empty()) tree["output"] = out;
    RunConfig cfg = config_from_json(tree);
    cfg.validate();
    return cfg;
  }
};

void say(const std::string& what, const nlohmann::json& j) {
  std::cout << what;
  if (j.contains("files")) std::cout << " (" << j.at("files").size() << " files)";
  std::cout << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-hypothesis shape estimation from single views"};
  app.require_subcommand(1);

  ConfigOptions c_gen, c_fit, c_train, c_est, c_eval, c_all, c_show;

  auto* show = app.add_subcommand("config", "print the resolved run configuration");
  c_show.attach(show);

  auto* gen = app.add_subcommand("gen-dataset", "render the synthetic dataset");
  c_gen.attach(gen);

  auto* fit = app.add_subcommand("fit-triplanes", "fit per-object triplanes and the shared decoder");
  c_fit.attach(fit);

  auto* train = app.add_subcommand("train-denoiser", "train one diffusion stage");
  c_train.attach(train);
  std::string stage;
  TrainOptions topt;
  train->add_option("--stage", stage, "norf or shape")->required();
  train->add_flag("--resume", topt.resume, "continue from the last checkpoint");
  train->add_option("--stop-after", topt.stop_after, "stop after this many steps in this invocation");

  auto* est = app.add_subcommand("estimate", "sample shape hypotheses");
  c_est.attach(est);
  std::string observation, depth, est_out, est_name = "estimates";
  std::size_t hypotheses = 0;
  std::uint64_t est_seed = 0;
  est->add_option("--observation", observation, "observation base path (<base>.json/.bin); default: all held-out views");
  est->add_option("--depth", depth, "NORF/depth map base path supplying depth, mask and camera");
  est->add_option("-N,--hypotheses", hypotheses, "hypotheses per observation (default from the configuration)");
  est->add_option("--sample-seed", est_seed, "sampling seed for a single observation");
  est->add_option("--into", est_out, "output directory for a single observation");
  est->add_option("--name", est_name, "estimates directory name inside the run (held-out mode)");

  auto* ev = app.add_subcommand("eval", "score held-out estimates");
  c_eval.attach(ev);
  std::string ev_name = "estimates";
  ev->add_option("--name", ev_name, "estimates directory name inside the run");

  auto* all = app.add_subcommand("run", "every stage in order: dataset, triplanes, both denoisers, estimates, eval");
  c_all.attach(all);

  auto* ins = app.add_subcommand("inspect", "validate and summarise an artifact");
  std::string ins_path;
  ins->add_option("path", ins_path, "artifact path")->required();

  CLI11_PARSE(app, argc, argv);

  if (*show) {
    std::cout << dump_json(config_to_json(c_show.resolve()));
  } else if (*gen) {
    say("dataset written", cmd_gen_dataset(c_gen.resolve()));
  } else if (*fit) {
    say("triplanes fitted", cmd_fit_triplanes(c_fit.resolve()));
  } else if (*train) {
    const auto m = cmd_train_denoiser(c_train.resolve(), stage_from_string(stage), topt);
    std::cout << stage << " denoiser at step " << m.at("steps") << (m.at("complete").get<bool>() ? ", complete" : ", checkpointed")
              << "\n";
  } else if (*est) {
    RunConfig cfg = c_est.resolve();
    const std::size_t n = hypotheses ? hypotheses : cfg.eval.hypotheses;
    if (observation.empty()) {
      if (!depth.empty() || !est_out.empty()) throw UsageError("--depth and --into need --observation");
      cfg.eval.hypotheses = n;
      say("held-out estimates written", cmd_estimate_heldout(cfg, est_name));
    } else {
      if (est_out.empty()) throw UsageError("--into is required with --observation");
      std::optional<fs::path> dpath;
      if (!depth.empty()) dpath = depth;
      say("estimate written to " + est_out, cmd_estimate_one(cfg, observation, dpath, n, est_seed, est_out));
    }
  } else if (*ev) {
    const auto r = cmd_eval(c_eval.resolve(), ev_name);
    std::cout << "oracle curve " << r.at("aggregate").at("oracle_curve").at("mean").dump() << "\n"
              << "inlier curve " << r.at("aggregate").at("inlier_curve").at("mean").dump() << "\n";
  } else if (*all) {
    const RunConfig cfg = c_all.resolve();
    say("dataset written", cmd_gen_dataset(cfg));
    say("triplanes fitted", cmd_fit_triplanes(cfg));
    cmd_train_denoiser(cfg, Stage::Norf);
    std::cout << "norf denoiser trained\n";
    cmd_train_denoiser(cfg, Stage::Shape);
    std::cout << "shape denoiser trained\n";
    say("held-out estimates written", cmd_estimate_heldout(cfg));
    const auto r = cmd_eval(cfg);
    std::cout << "oracle curve " << r.at("aggregate").at("oracle_curve").at("mean").dump() << "\n";
  } else if (*ins) {
    std::cout << inspect(ins_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape mismatch: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const RegistrationFailedError& e) {
    std::cerr << "registration failed: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
