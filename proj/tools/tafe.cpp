// Command-line front end for the experiment pipeline.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tafe/harness/config.hpp"
#include "tafe/harness/mission.hpp"
#include "tafe/harness/pipeline.hpp"
#include "tafe/harness/report.hpp"

namespace {

using namespace tafe;
using namespace tafe::harness;

constexpr int kExitError = 1;
constexpr int kExitIncomplete = 3;
constexpr int kExitCriteriaFailed = 4;

struct Globals {
  std::string config;
  std::optional<long> seed;
  std::string out = "tafe_out";
  std::vector<std::string> overrides;
};

ExperimentConfig load_config(const Globals& g) {
  KeyValueFile kv;
  if (!g.config.empty()) kv = KeyValueFile::load(g.config);
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw IoError("--set expects key=value, got '" + o + "'");
    kv.set(trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
  }
  if (g.seed) kv.set("seed", std::to_string(*g.seed));
  return ExperimentConfig::from_kv(kv);
}

int run_report(const ExperimentConfig& cfg, const Layout& layout, bool strict) {
  const auto r = cmd_report(cfg, layout);
  const auto& rep = r.report;
  for (const auto& [name, c] : rep.at("criteria").items())
    std::cout << name << ' ' << c.at("status").get<std::string>() << '\n';
  for (const auto& m : rep.at("missing")) std::cout << "missing " << m.get<std::string>() << '\n';
  std::cout << "status " << rep.at("status").get<std::string>() << '\n';
  if (!r.complete) return kExitIncomplete;
  if (strict && rep.at("status") != "pass") return kExitCriteriaFailed;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Terrain-adaptive dynamics models: data, training, evaluation, missions"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "base seed (overrides the config)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--set", g.overrides, "override a config key, key=value (repeatable)");

  auto* collect = app.add_subcommand("collect", "simulate one dataset per scene and seed");
  auto* train = app.add_subcommand("train", "train the function encoder and the neural ODE baseline");
  auto* onestep = app.add_subcommand("eval-onestep", "per-scene one-step MSE");
  auto* window = app.add_subcommand("eval-window", "one-step MSE against adaptation window size");
  auto* rollout = app.add_subcommand("eval-rollout", "accumulated MSE of open-loop rollouts");
  auto* mission = app.add_subcommand("mission", "closed-loop MPPI trials on the icy course");
  auto* report = app.add_subcommand("report", "evaluate every criterion and write figure CSVs");
  auto* all = app.add_subcommand("all", "run every stage in order, then report");
  bool strict = false;
  for (auto* s : {report, all})
    s->add_flag("--strict", strict, "exit with status 4 when a criterion fails");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_config(g);
    const Layout layout{g.out};
    ensure_dir(layout.root);
    if (*collect) cmd_collect(cfg, layout);
    if (*train) cmd_train(cfg, layout);
    if (*onestep) cmd_eval_onestep(cfg, layout);
    if (*window) cmd_eval_window(cfg, layout);
    if (*rollout) cmd_eval_rollout(cfg, layout);
    if (*mission) cmd_mission(cfg, layout);
    if (*report) return run_report(cfg, layout, strict);
    if (*all) {
      cmd_collect(cfg, layout);
      cmd_train(cfg, layout);
      cmd_eval_onestep(cfg, layout);
      cmd_eval_window(cfg, layout);
      cmd_eval_rollout(cfg, layout);
      cmd_mission(cfg, layout);
      return run_report(cfg, layout, strict);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return EXIT_SUCCESS;
}
