#pragma once

// Closed-loop MPPI missions on the icy scene.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tafe/adapt.hpp"
#include "tafe/harness/config.hpp"
#include "tafe/harness/pipeline.hpp"
#include "tafe/harness/stats.hpp"
#include "tafe/mppi.hpp"

namespace tafe::harness {

/// Tree field with three waypoints. Trees sit just past each waypoint, where a
/// vehicle that brakes or turns later than the ice allows will end up.
inline World default_mission_world() {
  World w;
  w.robot_radius = 0.5;
  w.bounds = {-10, -10, 25, 25};
  w.start = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  w.waypoints = {{{7.0, 0.0}, 1.0}, {{9.0, 7.0}, 1.0}, {{2.0, 10.0}, 1.0}};
  w.obstacles = {
      // beyond the first waypoint
      {{10.0, -0.5}, 0.6}, {{10.5, 1.5}, 0.6}, {{9.5, -2.5}, 0.6},
      // beyond the second
      {{10.5, 9.5}, 0.6}, {{12.0, 7.0}, 0.6}, {{8.0, 10.0}, 0.6},
      // beyond the third
      {{-1.0, 10.5}, 0.6}, {{0.0, 12.5}, 0.6}, {{-0.5, 8.0}, 0.6},
      // flanking the legs
      {{4.0, 2.5}, 0.6}, {{4.0, -2.5}, 0.6}, {{5.5, 6.0}, 0.6},
  };
  w.validate();
  return w;
}

inline World mission_world(const ExperimentConfig& cfg) {
  if (cfg.mission_world.empty()) return default_mission_world();
  return World::from_kv(KeyValueFile::load(cfg.mission_world));
}

struct TrialResult {
  std::string model;
  int trial = 0;
  int collisions = 0;
  std::size_t waypoints = 0;
  bool failed = false;  // simulation diverged
  bool out_of_bounds = false;
  std::size_t steps = 0;
  Trajectory path;
};

/// Number of entries into collision (rising edges) along a path.
inline int count_collisions(const Trajectory& path, const World& world) {
  int n = 0;
  bool inside = false;
  for (const auto& x : path.states) {
    const bool c = check_collision(x, world);
    if (c && !inside) ++n;
    inside = c;
  }
  return n;
}

namespace detail {

struct Plant {
  TerrainParams terrain;
  TruthConfig truth;
  const World* world;
  TrialResult* result;
  State x;
  std::size_t waypoint = 0;
  double t = 0.0;

  /// Apply u for one period; false once the trial has to stop.
  bool apply(const Control& u, Transition* tr) {
    const double dt = truth.dt();
    const State next = step_truth(x, u, terrain, dt, truth);
    result->path.controls.push_back(u);
    if (!next.finite()) {
      result->failed = true;
      return false;
    }
    if (tr) *tr = body_frame_delta(x, next, dt, u);
    x = next;
    t += dt;
    result->path.times.push_back(t);
    result->path.states.push_back(x);
    waypoint = waypoint_progress(x, *world, waypoint);
    if (!world->bounds.contains({x.px, x.py})) {
      result->out_of_bounds = true;
      return false;
    }
    return true;
  }
};

}  // namespace detail

struct MissionLogs {
  std::ostream* diagnostics = nullptr;
  std::ostream* adaptation = nullptr;
};

/// One trial. With `basis` set the controller plans with the adapted function
/// encoder, otherwise with the fixed `node` model.
inline TrialResult run_trial(const ExperimentConfig& cfg, const World& world, int trial,
                             std::uint64_t seed, std::shared_ptr<const BasisSet<double>> basis,
                             std::shared_ptr<const NodeModel<double>> node, MissionLogs logs = {}) {
  TrialResult res;
  res.model = basis ? "fenode" : "node";
  res.trial = trial;

  const auto trial_seed = derive_seed(seed, streams::mission + static_cast<std::uint64_t>(trial));
  std::mt19937_64 rng(trial_seed);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  State start = world.start;
  start.px += jitter(rng);
  start.py += jitter(rng);
  start.psi = wrap_angle(start.psi + 0.5 * jitter(rng));

  detail::Plant plant{terrain_from_theta(cfg.extrap_scene, cfg.truth), cfg.truth, &world, &res, start};
  res.path.times.push_back(0.0);
  res.path.states.push_back(start);

  MppiConfig mc = cfg.mppi;
  mc.seed = trial_seed;
  MppiController ctl(mc, cfg.cost);

  std::shared_ptr<const BasisSet<float>> fast_basis;
  std::shared_ptr<const NodeModel<float>> fast_node;
  if (basis) {
    auto b = basis->cast<float>();
    b.substeps = cfg.mission_substeps;
    fast_basis = std::make_shared<const BasisSet<float>>(std::move(b));
  } else {
    auto n = node->cast<float>();
    n.substeps = cfg.mission_substeps;
    fast_node = std::make_shared<const NodeModel<float>>(std::move(n));
  }

  AdaptationBuffer buffer(cfg.adapt_capacity, cfg.adapt_period);
  if (logs.adaptation && basis) write_adaptation_header(*logs.adaptation, basis->k());
  if (logs.diagnostics) write_diagnostics_header(*logs.diagnostics);

  // Scripted excitation before the first waypoint, identical for both models.
  const auto boot_steps = static_cast<int>(std::lround(kBootstrapSeconds * cfg.truth.rate_hz));
  bool running = true;
  for (int i = 0; i < boot_steps && running; ++i) {
    Transition tr;
    running = plant.apply(bootstrap_control(plant.t, cfg.truth.limits), &tr);
    if (running) buffer.push(tr);
  }
  if (running && basis) {
    buffer.refresh(*basis);
    if (logs.adaptation) append_adaptation_row(*logs.adaptation, 0, buffer);
  }

  const auto max_steps = static_cast<std::size_t>(std::lround(cfg.mission_max_time * cfg.truth.rate_hz));
  std::size_t step = 0;
  while (running && plant.waypoint < world.waypoints.size() && step < max_steps) {
    Control u;
    if (basis)
      u = ctl.step(adaptive_model(fast_basis, buffer), plant.x, world, plant.waypoint);
    else
      u = ctl.step(NodeIncrementModel<float>{fast_node}, plant.x, world, plant.waypoint);
    if (logs.diagnostics) append_diagnostics(*logs.diagnostics, ctl.diagnostics());
    Transition tr;
    running = plant.apply(u, &tr);
    ++step;
    if (running && basis) {
      buffer.push(tr);
      buffer.maybe_refresh(*basis, step);
      if (logs.adaptation) append_adaptation_row(*logs.adaptation, step, buffer);
    }
  }
  // A diverged step logged its control but no state.
  while (res.path.controls.size() >= res.path.states.size()) res.path.controls.pop_back();
  res.steps = step;
  res.waypoints = plant.waypoint;
  res.collisions = count_collisions(res.path, world);
  return res;
}

inline std::vector<TrialResult> cmd_mission(const ExperimentConfig& cfg, const Layout& layout) {
  Stopwatch clock;
  const World world = mission_world(cfg);
  const auto seed = cfg.seed_list()[static_cast<std::size_t>(cfg.mission_seed_index)];
  const auto models = load_models(layout, seed);
  ensure_dir(layout.mission());
  world.to_kv().save(layout.mission() / "world.txt");

  std::vector<TrialResult> results;
  nlohmann::json timing = nlohmann::json::object();
  for (const std::string model : {"fenode", "node"}) {
    Stopwatch model_clock;
    for (int trial = 0; trial < cfg.mission_trials; ++trial) {
      const std::string stem = model + "_trial" + std::to_string(trial);
      auto diag = open_out(layout.mission() / (stem + "_mppi.csv"));
      std::ofstream adapt_log;
      MissionLogs logs{&diag, nullptr};
      if (model == "fenode") {
        adapt_log = open_out(layout.mission() / (stem + "_adapt.csv"));
        logs.adaptation = &adapt_log;
      }
      auto r = run_trial(cfg, world, trial, seed, model == "fenode" ? models.basis : nullptr,
                         model == "node" ? models.node : nullptr, logs);
      save_trajectory_csv(layout.mission() / (stem + "_path.csv"), r.path);
      results.push_back(std::move(r));
    }
    timing[model + "_s"] = model_clock.seconds();
  }

  auto out = open_out(layout.mission() / "summary.csv");
  out << "model,trial,collisions,waypoints,failed,out_of_bounds,steps\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : results) {
    out << r.model << ',' << r.trial << ',' << r.collisions << ',' << r.waypoints << ','
        << (r.failed ? 1 : 0) << ',' << (r.out_of_bounds ? 1 : 0) << ',' << r.steps << '\n';
    j.push_back({{"model", r.model},
                 {"trial", r.trial},
                 {"collisions", r.collisions},
                 {"waypoints", r.waypoints},
                 {"failed", r.failed},
                 {"out_of_bounds", r.out_of_bounds},
                 {"steps", r.steps}});
  }
  write_json_file(layout.mission() / "summary.json", j);
  timing["total_s"] = clock.seconds();
  record_timing(layout, "mission", timing);
  return results;
}

}  // namespace tafe::harness
