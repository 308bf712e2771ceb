#pragma once

// Experiment configuration and the on-disk layout shared by every subcommand.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tafe/adapt.hpp"
#include "tafe/fenode.hpp"
#include "tafe/io.hpp"
#include "tafe/mppi.hpp"
#include "tafe/simworld.hpp"

namespace tafe::harness {

namespace fs = std::filesystem;

struct ExperimentConfig {
  // Scenes, ascending in theta. Output index i refers to scenes[i].
  std::vector<double> scenes{0.0, 0.25, 0.5, 0.75, 0.812, 0.875, 0.939, 1.0};
  std::vector<double> train_scenes{0.25, 0.75, 0.812, 0.875, 0.939, 1.0};
  double interp_scene = 0.5;
  double extrap_scene = 0.0;

  std::uint64_t base_seed = 0;
  int seeds = 10;

  double collect_duration = 120.0;  // s per scene and seed
  double train_fraction = 0.6;      // leading share of each training trajectory
  TruthConfig truth{};
  ExcitationConfig excitation{};

  int k = 8;
  int hidden = 32;
  int hidden_layers = 2;
  int substeps = kDefaultSubsteps;
  TrainConfig train{};
  std::size_t val_support = 50;
  std::size_t val_query = 50;

  std::size_t eval_support = 100;
  std::vector<int> windows{1, 2, 5, 10, 20, 50, 100, 200};
  int rollouts = 100;
  double rollout_horizon = 10.0;  // s

  int mission_trials = 4;
  double mission_max_time = 80.0;  // s
  std::string mission_world;      // empty: built-in icy course
  int mission_substeps = 1;       // integrator substeps inside MPPI rollouts
  int mission_seed_index = 0;     // whose checkpoints fly the mission
  std::size_t adapt_capacity = 100;
  std::size_t adapt_period = 1;   // 0 in the file means never refresh after the first solve
  MppiConfig mppi = desk_mppi();
  CostSpec cost = desk_cost();

  MppiConfig budget_mppi{};  // full-size controller timed for the online budget

  static MppiConfig desk_mppi() {
    MppiConfig m;
    m.r = 256;
    m.T = 30;
    return m;
  }
  static CostSpec desk_cost() { return {}; }

  [[nodiscard]] std::vector<std::uint64_t> seed_list() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < seeds; ++i) out.push_back(base_seed + static_cast<std::uint64_t>(i));
    return out;
  }

  [[nodiscard]] std::vector<int> layers() const { return default_field_layers(hidden, hidden_layers); }
  [[nodiscard]] int steps_per_horizon() const {
    return static_cast<int>(std::lround(rollout_horizon * truth.rate_hz));
  }

  [[nodiscard]] int scene_index(double theta) const {
    for (std::size_t i = 0; i < scenes.size(); ++i)
      if (scenes[i] == theta) return static_cast<int>(i);
    return -1;
  }
  [[nodiscard]] bool is_train(double theta) const {
    return std::find(train_scenes.begin(), train_scenes.end(), theta) != train_scenes.end();
  }
  [[nodiscard]] std::string role(double theta) const {
    if (is_train(theta)) return "train";
    if (theta == interp_scene) return "interp";
    if (theta == extrap_scene) return "extrap";
    return "eval";
  }

  void validate() const {
    if (seeds < 1) throw InvalidInput("config: seeds must be >= 1");
    if (scenes.empty()) throw InvalidInput("config: no scenes");
    for (std::size_t i = 1; i < scenes.size(); ++i)
      if (!(scenes[i] > scenes[i - 1])) throw InvalidInput("config: scenes must be strictly ascending");
    if (train_scenes.size() < 2) throw InvalidInput("config: need at least two training scenes");
    for (double t : train_scenes)
      if (scene_index(t) < 0) throw InvalidInput("config: training scene not in the scene list");
    for (double h : {interp_scene, extrap_scene}) {
      if (scene_index(h) < 0) throw InvalidInput("config: holdout scene not in the scene list");
      if (is_train(h)) throw InvalidInput("config: holdout scene overlaps the training scenes");
    }
    if (interp_scene == extrap_scene) throw InvalidInput("config: holdout scenes must differ");
    if (!(collect_duration > 0)) throw InvalidInput("config: collect.duration must be positive");
    if (!(train_fraction > 0 && train_fraction < 1))
      throw InvalidInput("config: collect.train_fraction must lie in (0, 1)");
    if (k < 1 || hidden < 1 || hidden_layers < 1 || substeps < 1)
      throw InvalidInput("config: model sizes must be positive");
    if (train.epochs < 1 || train.steps_per_epoch < 1 || train.batch_per_dataset < 2)
      throw InvalidInput("config: bad training budget");
    if (eval_support < 1 || rollouts < 1 || !(rollout_horizon > 0))
      throw InvalidInput("config: bad evaluation settings");
    if (windows.empty()) throw InvalidInput("config: eval.windows is empty");
    for (int n : windows)
      if (n < 1) throw InvalidInput("config: window sizes must be positive");
    if (mission_trials < 1 || !(mission_max_time > 0) || mission_substeps < 1)
      throw InvalidInput("config: bad mission settings");
    if (mission_seed_index < 0 || mission_seed_index >= seeds)
      throw InvalidInput("config: mission.seed_index out of range");
    if (adapt_capacity < 1) throw InvalidInput("config: adapt.capacity must be >= 1");
    mppi.validate();
    cost.validate();
    budget_mppi.validate();
  }

  static ExperimentConfig from_kv(const KeyValueFile& kv) {
    ExperimentConfig c;
    auto list = [&kv](const std::string& key, std::vector<double> fallback) {
      return kv.has(key) ? parse_doubles(kv.get(key)) : fallback;
    };
    c.scenes = list("scenes", c.scenes);
    c.train_scenes = list("train_scenes", c.train_scenes);
    c.interp_scene = kv.get_double("interp_scene", c.interp_scene);
    c.extrap_scene = kv.get_double("extrap_scene", c.extrap_scene);
    c.base_seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    c.seeds = static_cast<int>(kv.get_int("seeds", c.seeds));
    c.collect_duration = kv.get_double("collect.duration", c.collect_duration);
    c.train_fraction = kv.get_double("collect.train_fraction", c.train_fraction);
    c.truth = TruthConfig::from_kv(kv);
    c.excitation.initial_speed = kv.get_double("collect.initial_speed", c.excitation.initial_speed);
    c.excitation.v_nominal = kv.get_double("collect.v_nominal", c.excitation.v_nominal);
    c.k = static_cast<int>(kv.get_int("model.k", c.k));
    c.hidden = static_cast<int>(kv.get_int("model.hidden", c.hidden));
    c.hidden_layers = static_cast<int>(kv.get_int("model.hidden_layers", c.hidden_layers));
    c.substeps = static_cast<int>(kv.get_int("model.substeps", c.substeps));
    c.train.epochs = static_cast<int>(kv.get_int("train.epochs", c.train.epochs));
    c.train.steps_per_epoch =
        static_cast<int>(kv.get_int("train.steps_per_epoch", c.train.steps_per_epoch));
    c.train.batch_per_dataset = static_cast<std::size_t>(
        kv.get_int("train.batch_per_dataset", static_cast<long>(c.train.batch_per_dataset)));
    c.train.support_fraction = kv.get_double("train.support_fraction", c.train.support_fraction);
    c.train.adam.learning_rate = kv.get_double("train.learning_rate", c.train.adam.learning_rate);
    c.train.loss.reg.relative = kv.get_double("train.reg_relative", c.train.loss.reg.relative);
    c.val_support =
        static_cast<std::size_t>(kv.get_int("train.val_support", static_cast<long>(c.val_support)));
    c.val_query =
        static_cast<std::size_t>(kv.get_int("train.val_query", static_cast<long>(c.val_query)));
    c.eval_support =
        static_cast<std::size_t>(kv.get_int("eval.support", static_cast<long>(c.eval_support)));
    if (kv.has("eval.windows")) {
      c.windows.clear();
      for (double n : parse_doubles(kv.get("eval.windows"))) c.windows.push_back(static_cast<int>(n));
    }
    c.rollouts = static_cast<int>(kv.get_int("eval.rollouts", c.rollouts));
    c.rollout_horizon = kv.get_double("eval.horizon", c.rollout_horizon);
    c.mission_trials = static_cast<int>(kv.get_int("mission.trials", c.mission_trials));
    c.mission_max_time = kv.get_double("mission.max_time", c.mission_max_time);
    c.mission_world = kv.get_or("mission.world", c.mission_world);
    c.mission_substeps = static_cast<int>(kv.get_int("mission.substeps", c.mission_substeps));
    c.mission_seed_index = static_cast<int>(kv.get_int("mission.seed_index", c.mission_seed_index));
    c.adapt_capacity = static_cast<std::size_t>(
        kv.get_int("adapt.capacity", static_cast<long>(c.adapt_capacity)));
    const long period = kv.get_int("adapt.refresh_period", static_cast<long>(c.adapt_period));
    if (period < 0) throw InvalidInput("config: adapt.refresh_period must be >= 0");
    c.adapt_period = period == 0 ? kNeverRefresh : static_cast<std::size_t>(period);
    c.mppi = desk_mppi();
    c.mppi.limits = c.truth.limits;
    c.mppi.dt = c.truth.dt();
    merge_mppi(kv, "mppi.", c.mppi);
    c.budget_mppi.limits = c.truth.limits;
    c.budget_mppi.dt = c.truth.dt();
    merge_mppi(kv, "budget.", c.budget_mppi);
    c.cost = merge_cost(kv, c.cost);
    c.validate();
    return c;
  }

  static ExperimentConfig load(const fs::path& path) { return from_kv(KeyValueFile::load(path)); }

 private:
  static void merge_mppi(const KeyValueFile& kv, const std::string& prefix, MppiConfig& m) {
    m.r = static_cast<int>(kv.get_int(prefix + "rollouts", m.r));
    m.T = static_cast<int>(kv.get_int(prefix + "horizon", m.T));
    m.lambda = kv.get_double(prefix + "lambda", m.lambda);
    if (kv.has(prefix + "sigma")) {
      const auto s = parse_doubles(kv.get(prefix + "sigma"));
      if (s.size() != 2) throw IoError(prefix + "sigma: expected 2 values");
      m.sigma = {s[0], s[1]};
    }
    m.sg_window = static_cast<int>(kv.get_int(prefix + "sg_window", m.sg_window));
    m.sg_order = static_cast<int>(kv.get_int(prefix + "sg_order", m.sg_order));
  }

  static CostSpec merge_cost(const KeyValueFile& kv, CostSpec c) {
    c.waypoint_weight = kv.get_double("cost.waypoint_weight", c.waypoint_weight);
    c.obstacle_penalty = kv.get_double("cost.obstacle_penalty", c.obstacle_penalty);
    c.obstacle_inflation = kv.get_double("cost.obstacle_inflation", c.obstacle_inflation);
    c.terminal_weight = kv.get_double("cost.terminal_weight", c.terminal_weight);
    if (kv.has("cost.beta")) {
      const auto b = parse_doubles(kv.get("cost.beta"));
      if (b.size() != 2) throw IoError("cost.beta: expected 2 values");
      c.beta = {b[0], b[1]};
    }
    return c;
  }
};

/// Where each subcommand reads and writes.
struct Layout {
  fs::path root;

  static std::string seed_dir(std::uint64_t s) { return "seed_" + std::to_string(s); }

  [[nodiscard]] fs::path data(std::uint64_t s) const { return root / "data" / seed_dir(s); }
  [[nodiscard]] fs::path scene_csv(std::uint64_t s, int i) const {
    return data(s) / ("scene_" + std::to_string(i) + ".csv");
  }
  [[nodiscard]] fs::path scene_meta(std::uint64_t s, int i) const {
    return data(s) / ("scene_" + std::to_string(i) + ".meta");
  }
  [[nodiscard]] fs::path models(std::uint64_t s) const { return root / "models" / seed_dir(s); }
  [[nodiscard]] fs::path fenode(std::uint64_t s) const { return models(s) / "fenode.json"; }
  [[nodiscard]] fs::path node(std::uint64_t s) const { return models(s) / "node.json"; }
  [[nodiscard]] fs::path eval() const { return root / "eval"; }
  [[nodiscard]] fs::path mission() const { return root / "mission"; }
  [[nodiscard]] fs::path report() const { return root / "report.json"; }
  [[nodiscard]] fs::path timings() const { return root / "timings.json"; }
};

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

inline std::ofstream open_out(const fs::path& p) {
  ensure_dir(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  return out;
}

}  // namespace tafe::harness
