#pragma once

// collect, train and the three offline evaluations.

#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tafe/fenode.hpp"
#include "tafe/harness/config.hpp"
#include "tafe/harness/stats.hpp"
#include "tafe/io.hpp"
#include "tafe/models.hpp"
#include "tafe/mppi.hpp"
#include "tafe/node_baseline.hpp"
#include "tafe/simworld.hpp"

namespace tafe::harness {

// Stream ids for derive_seed; fixed so every artifact is reproducible per seed.
namespace streams {
inline constexpr std::uint64_t collect = 1000;
inline constexpr std::uint64_t basis_init = 11;
inline constexpr std::uint64_t node_init = 12;
inline constexpr std::uint64_t minibatch = 13;
inline constexpr std::uint64_t validation = 14;
inline constexpr std::uint64_t support = 2000;
inline constexpr std::uint64_t rollout_starts = 3000;
inline constexpr std::uint64_t mission = 4000;
}  // namespace streams

inline std::string scene_id(int i) { return "scene_" + std::to_string(i); }

// ---------------------------------------------------------------------------
// collect

struct SceneSpread {
  std::uint64_t seed = 0;
  int scene = 0;
  double theta = 0.0;
  double vy_std = 0.0;
  double slip_angle = 0.0;  // mean |atan2(vy, |vx|)|, rad
};

inline SceneSpread measure_spread(const Trajectory& traj) {
  SceneSpread s;
  double sum = 0.0, sq = 0.0, slip = 0.0;
  for (const auto& x : traj.states) {
    sum += x.vy;
    sq += x.vy * x.vy;
    slip += std::abs(std::atan2(x.vy, std::abs(x.vx)));
  }
  const auto n = static_cast<double>(traj.states.size());
  s.vy_std = std::sqrt(std::max(0.0, sq / n - (sum / n) * (sum / n)));
  s.slip_angle = slip / n;
  return s;
}

/// One trajectory CSV plus a metadata sidecar per scene and seed.
inline std::vector<SceneSpread> cmd_collect(const ExperimentConfig& cfg, const Layout& layout) {
  Stopwatch clock;
  std::vector<SceneSpread> rows;
  for (auto seed : cfg.seed_list()) {
    ensure_dir(layout.data(seed));
    for (std::size_t i = 0; i < cfg.scenes.size(); ++i) {
      const double theta = cfg.scenes[i];
      const int idx = static_cast<int>(i);
      const auto data_seed = derive_seed(seed, streams::collect + i);
      const auto c = collect_dataset(terrain_from_theta(theta, cfg.truth), cfg.collect_duration,
                                     data_seed, cfg.truth, cfg.excitation, scene_id(idx));
      save_trajectory_csv(layout.scene_csv(seed, idx), c.trajectory);
      KeyValueFile meta;
      meta.add("scene", scene_id(idx));
      meta.add("theta", fmt_double(theta));
      meta.add("role", cfg.role(theta));
      meta.add("seed", std::to_string(seed));
      meta.add("data_seed", std::to_string(data_seed));
      meta.add("duration", fmt_double(cfg.collect_duration));
      meta.add("rate_hz", fmt_double(cfg.truth.rate_hz));
      meta.add("samples", std::to_string(c.trajectory.size()));
      meta.save(layout.scene_meta(seed, idx));
      auto s = measure_spread(c.trajectory);
      s.seed = seed;
      s.scene = idx;
      s.theta = theta;
      rows.push_back(s);
    }
  }
  auto out = open_out(layout.root / "collect_summary.csv");
  out << "seed,scene,theta,vy_std,slip_angle\n";
  for (const auto& r : rows)
    out << r.seed << ',' << r.scene << ',' << fmt_double(r.theta) << ',' << fmt_double(r.vy_std)
        << ',' << fmt_double(r.slip_angle) << '\n';
  record_timing(layout, "collect_s", clock.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// Loading collected data

struct SceneData {
  int index = 0;
  double theta = 0.0;
  std::string role;
  Trajectory trajectory;
  Dataset train;  // empty for scenes outside the training set
  Dataset eval;   // trailing share for training scenes, everything otherwise
};

inline SceneData load_scene(const ExperimentConfig& cfg, const Layout& layout, std::uint64_t seed,
                            int i) {
  const auto path = layout.scene_csv(seed, i);
  if (!fs::exists(path)) throw IoError("missing dataset " + path.string() + " (run collect first)");
  SceneData s;
  s.index = i;
  s.theta = cfg.scenes[static_cast<std::size_t>(i)];
  s.role = cfg.role(s.theta);
  s.trajectory = load_trajectory_csv(path);
  const Dataset all = build_dataset(s.trajectory, scene_id(i), s.theta);
  s.train = {all.terrain_id, all.theta, {}};
  s.eval = {all.terrain_id, all.theta, {}};
  if (cfg.is_train(s.theta)) {
    const auto cut = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(all.size())));
    s.train.transitions.assign(all.transitions.begin(),
                               all.transitions.begin() + static_cast<std::ptrdiff_t>(cut));
    s.eval.transitions.assign(all.transitions.begin() + static_cast<std::ptrdiff_t>(cut),
                              all.transitions.end());
  } else {
    s.eval = all;
  }
  return s;
}

inline std::vector<SceneData> load_scenes(const ExperimentConfig& cfg, const Layout& layout,
                                          std::uint64_t seed) {
  std::vector<SceneData> out;
  for (std::size_t i = 0; i < cfg.scenes.size(); ++i)
    out.push_back(load_scene(cfg, layout, seed, static_cast<int>(i)));
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  std::uint64_t seed = 0;
  double fenode_first = 0.0, fenode_final = 0.0;
  double node_first = 0.0, node_final = 0.0;
};

inline TrainConfig train_config_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(seed, streams::minibatch);
  return t;
}

inline std::vector<TrainSummary> cmd_train(const ExperimentConfig& cfg, const Layout& layout) {
  std::vector<TrainSummary> out;
  nlohmann::json timing = nlohmann::json::object();
  for (auto seed : cfg.seed_list()) {
    const auto scenes = load_scenes(cfg, layout, seed);
    std::vector<Dataset> train_sets;
    ValidationSets val;
    for (const auto& s : scenes) {
      if (s.role == "train") train_sets.push_back(s.train);
      const auto vseed = derive_seed(seed, streams::validation + static_cast<std::uint64_t>(s.index));
      if (s.role == "interp") val.interp = make_episode(s.eval, cfg.val_support, cfg.val_query, vseed);
      if (s.role == "extrap") val.extrap = make_episode(s.eval, cfg.val_support, cfg.val_query, vseed);
    }
    const TrainConfig tc = train_config_for(cfg, seed);
    ensure_dir(layout.models(seed));

    Stopwatch fe_clock;
    FeTrainResult fe;
    try {
      fe = train(make_basis(cfg.k, cfg.layers(), derive_seed(seed, streams::basis_init), cfg.substeps),
                 train_sets, tc, val);
    } catch (const TrainingFailure& e) {
      throw TrainingFailure(std::string("fenode, seed ") + std::to_string(seed) + ": " + e.what(),
                            e.epoch);
    }
    const double fe_s = fe_clock.seconds();
    Stopwatch node_clock;
    NodeTrainResult nd;
    try {
      nd = train_node(make_node(cfg.layers(), derive_seed(seed, streams::node_init), cfg.substeps),
                      train_sets, tc, val);
    } catch (const TrainingFailure& e) {
      throw TrainingFailure(std::string("node, seed ") + std::to_string(seed) + ": " + e.what(),
                            e.epoch);
    }
    const double node_s = node_clock.seconds();

    save_checkpoint(layout.fenode(seed), fe.basis);
    save_node_checkpoint(layout.node(seed), nd.model);
    {
      auto f = open_out(layout.models(seed) / "losses_fenode.csv");
      write_loss_csv(f, fe.history);
      auto n = open_out(layout.models(seed) / "losses_node.csv");
      write_loss_csv(n, nd.history);
    }
    out.push_back({seed, fe.history.front().train_mse, fe.history.back().train_mse,
                   nd.history.front().train_mse, nd.history.back().train_mse});
    timing[Layout::seed_dir(seed)] = {{"fenode_s", fe_s}, {"node_s", node_s}};
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : out)
    j.push_back({{"seed", s.seed},
                 {"fenode_first_mse", s.fenode_first},
                 {"fenode_final_mse", s.fenode_final},
                 {"node_first_mse", s.node_first},
                 {"node_final_mse", s.node_final}});
  write_json_file(layout.root / "models" / "train.json", j);
  record_timing(layout, "train", timing);
  return out;
}

// ---------------------------------------------------------------------------
// Shared evaluation helpers

struct LoadedModels {
  std::shared_ptr<const BasisSet<double>> basis;
  std::shared_ptr<const NodeModel<double>> node;
};

inline LoadedModels load_models(const Layout& layout, std::uint64_t seed) {
  for (const auto& p : {layout.fenode(seed), layout.node(seed)})
    if (!fs::exists(p)) throw IoError("missing checkpoint " + p.string() + " (run train first)");
  return {std::make_shared<const BasisSet<double>>(load_checkpoint(layout.fenode(seed))),
          std::make_shared<const NodeModel<double>>(load_node_checkpoint(layout.node(seed)))};
}

/// Held-out support sample and the remaining query set for one scene.
inline Episode support_split(const ExperimentConfig& cfg, const SceneData& s, std::uint64_t seed) {
  const std::size_t n = s.eval.size();
  const std::size_t support = std::min(cfg.eval_support, n > 1 ? n - 1 : n);
  return make_episode(s.eval, support, n - support,
                      derive_seed(seed, streams::support + static_cast<std::uint64_t>(s.index)));
}

// ---------------------------------------------------------------------------
// eval-onestep

struct OneStepRow {
  std::uint64_t seed = 0;
  int scene = 0;
  double theta = 0.0;
  std::string role;
  double fenode = 0.0;
  double node = 0.0;
};

inline std::vector<OneStepRow> cmd_eval_onestep(const ExperimentConfig& cfg, const Layout& layout) {
  Stopwatch clock;
  std::vector<OneStepRow> rows;
  for (auto seed : cfg.seed_list()) {
    const auto models = load_models(layout, seed);
    for (const auto& s : load_scenes(cfg, layout, seed)) {
      const Episode ep = support_split(cfg, s, seed);
      const auto coeffs = fit_coefficients(*models.basis, std::span<const Transition>(ep.support));
      const auto batch = make_batch<double>(ep.query);
      const Mat<double> targets = targets_of(ep.query);
      rows.push_back({seed, s.index, s.theta, s.role,
                      increment_mse(predict_increments(*models.basis, coeffs.alpha, batch), targets),
                      increment_mse(predict_increments(*models.node, batch), targets)});
    }
  }
  ensure_dir(layout.eval());
  {
    auto out = open_out(layout.eval() / "onestep.csv");
    out << "seed,scene,theta,role,model,mse\n";
    for (const auto& r : rows)
      for (const auto& [model, v] : {std::pair{"fenode", r.fenode}, std::pair{"node", r.node}})
        out << r.seed << ',' << r.scene << ',' << fmt_double(r.theta) << ',' << r.role << ','
            << model << ',' << fmt_double(v) << '\n';
  }
  {
    auto out = open_out(layout.eval() / "onestep_summary.csv");
    out << "scene,theta,role,model,median,min,max\n";
    for (std::size_t i = 0; i < cfg.scenes.size(); ++i) {
      std::vector<double> fe, nd;
      for (const auto& r : rows)
        if (r.scene == static_cast<int>(i)) {
          fe.push_back(r.fenode);
          nd.push_back(r.node);
        }
      for (const auto& [model, v] : {std::pair{"fenode", fe}, std::pair{"node", nd}})
        out << i << ',' << fmt_double(cfg.scenes[i]) << ',' << cfg.role(cfg.scenes[i]) << ','
            << model << ',' << fmt_double(median(v)) << ','
            << fmt_double(*std::min_element(v.begin(), v.end())) << ','
            << fmt_double(*std::max_element(v.begin(), v.end())) << '\n';
    }
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"seed", r.seed},
                 {"scene", r.scene},
                 {"theta", r.theta},
                 {"role", r.role},
                 {"fenode_mse", r.fenode},
                 {"node_mse", r.node}});
  write_json_file(layout.eval() / "onestep.json", j);
  record_timing(layout, "eval_onestep_s", clock.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// eval-window

struct WindowRow {
  std::uint64_t seed = 0;
  int n = 0;
  double fenode = 0.0;
  double node = 0.0;
};

/// Streaming one-step error on the interpolation scene: the prediction for
/// transition t uses coefficients solved from transitions [t - n, t). Every
/// window size is scored on the same targets (t >= largest window).
inline std::vector<WindowRow> window_stream(const ExperimentConfig& cfg, const BasisSet<double>& basis,
                                            const NodeModel<double>& node, const Dataset& stream,
                                            std::uint64_t seed) {
  const int n_max = *std::max_element(cfg.windows.begin(), cfg.windows.end());
  const auto N = static_cast<Eigen::Index>(stream.size());
  if (N <= n_max) throw InvalidInput("eval-window: stream shorter than the largest window");
  const auto batch = make_batch<double>(stream.transitions);
  const Mat<double> targets = targets_of(stream.transitions);
  const auto incs = basis_increments(basis, batch);
  const auto k = static_cast<Eigen::Index>(incs.size());

  // Per-sample Gram and right-hand-side contributions.
  std::vector<Eigen::MatrixXd> gram(static_cast<std::size_t>(N));
  std::vector<Eigen::VectorXd> rhs(static_cast<std::size_t>(N));
  for (Eigen::Index t = 0; t < N; ++t) {
    Eigen::MatrixXd p(kStateDim, k);
    for (Eigen::Index j = 0; j < k; ++j) p.col(j) = incs[static_cast<std::size_t>(j)].col(t);
    gram[static_cast<std::size_t>(t)] = p.transpose() * p;
    rhs[static_cast<std::size_t>(t)] = p.transpose() * targets.col(t);
  }

  const Mat<double> node_pred = predict_increments(node, batch);
  const Mat<double> scored_targets = targets.rightCols(N - n_max);
  const double node_mse = increment_mse(node_pred.rightCols(N - n_max), scored_targets);

  std::vector<WindowRow> rows;
  for (int n : cfg.windows) {
    Mat<double> pred(kStateDim, N - n_max);
    for (Eigen::Index t = n_max; t < N; ++t) {
      GramSystem sys;
      sys.gram = Eigen::MatrixXd::Zero(k, k);
      sys.rhs = Eigen::VectorXd::Zero(k);
      for (Eigen::Index s = t - n; s < t; ++s) {
        sys.gram += gram[static_cast<std::size_t>(s)];
        sys.rhs += rhs[static_cast<std::size_t>(s)];
      }
      sys.gram /= static_cast<double>(n);
      sys.rhs /= static_cast<double>(n);
      sys.lambda = Regularization{}.relative * sys.gram.trace() / static_cast<double>(k);
      sys.sample_count = static_cast<std::size_t>(n);
      const Eigen::VectorXd alpha = solve_coefficients(sys).alpha;
      Eigen::VectorXd y = Eigen::VectorXd::Zero(kStateDim);
      for (Eigen::Index j = 0; j < k; ++j) y += alpha[j] * incs[static_cast<std::size_t>(j)].col(t);
      pred.col(t - n_max) = y;
    }
    rows.push_back({seed, n, increment_mse(pred, scored_targets), node_mse});
  }
  return rows;
}

inline std::vector<WindowRow> cmd_eval_window(const ExperimentConfig& cfg, const Layout& layout) {
  Stopwatch clock;
  std::vector<WindowRow> rows;
  const int scene = cfg.scene_index(cfg.interp_scene);
  for (auto seed : cfg.seed_list()) {
    const auto models = load_models(layout, seed);
    const auto s = load_scene(cfg, layout, seed, scene);
    for (auto& r : window_stream(cfg, *models.basis, *models.node, s.eval, seed)) rows.push_back(r);
  }
  ensure_dir(layout.eval());
  {
    auto out = open_out(layout.eval() / "window.csv");
    out << "seed,n,fenode_mse,node_mse\n";
    for (const auto& r : rows)
      out << r.seed << ',' << r.n << ',' << fmt_double(r.fenode) << ',' << fmt_double(r.node) << '\n';
  }
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"seed", r.seed}, {"n", r.n}, {"fenode_mse", r.fenode}, {"node_mse", r.node}});
  write_json_file(layout.eval() / "window.json", j);
  record_timing(layout, "eval_window_s", clock.seconds());
  return rows;
}

// ---------------------------------------------------------------------------
// eval-rollout

struct RolloutCurves {
  int scene = 0;
  double theta = 0.0;
  std::string role;
  // [rollout][t], t = 0..H, accumulated state MSE
  std::vector<std::vector<double>> fenode;
  std::vector<std::vector<double>> node;
};

/// Accumulated state MSE along open-loop rollouts that replay recorded controls.
template <IncrementModel M>
std::vector<std::vector<double>> accumulated_mse(const M& model, const Trajectory& truth,
                                                 const std::vector<std::size_t>& starts, int horizon,
                                                 double dt) {
  std::vector<ControlSeq> seqs;
  for (auto s : starts) {
    ControlSeq v(2, horizon);
    for (int t = 0; t < horizon; ++t) {
      const auto& u = truth.controls[s + static_cast<std::size_t>(t)];
      v.col(t) << u.v_cmd, u.w_cmd;
    }
    seqs.push_back(std::move(v));
  }
  std::vector<State> x0;
  for (auto s : starts) x0.push_back(truth.states[s]);
  std::vector<std::vector<double>> acc(starts.size(),
                                       std::vector<double>(static_cast<std::size_t>(horizon) + 1, 0.0));
  rollout_batch(model, x0, seqs, dt, [&](Eigen::Index t, const Mat<double>& s) {
    if (t == 0) return;
    const auto ti = static_cast<std::size_t>(t);
    for (std::size_t i = 0; i < starts.size(); ++i) {
      const State x = tafe::detail::column_state(s, static_cast<Eigen::Index>(i));
      const double e = x.finite() ? state_mse(x, truth.states[starts[i] + ti])
                                  : std::numeric_limits<double>::infinity();
      acc[i][ti] = acc[i][ti - 1] + e;
    }
  });
  return acc;
}

inline std::vector<RolloutCurves> cmd_eval_rollout(const ExperimentConfig& cfg, const Layout& layout) {
  Stopwatch clock;
  const int horizon = cfg.steps_per_horizon();
  std::vector<RolloutCurves> curves;
  for (double theta : {cfg.interp_scene, cfg.extrap_scene}) {
    RolloutCurves c;
    c.scene = cfg.scene_index(theta);
    c.theta = theta;
    c.role = cfg.role(theta);
    curves.push_back(std::move(c));
  }
  for (auto seed : cfg.seed_list()) {
    const auto models = load_models(layout, seed);
    for (auto& c : curves) {
      const auto s = load_scene(cfg, layout, seed, c.scene);
      const Episode ep = support_split(cfg, s, seed);
      const auto coeffs = fit_coefficients(*models.basis, std::span<const Transition>(ep.support));
      const std::size_t steps = s.trajectory.controls.size();
      if (steps < static_cast<std::size_t>(horizon))
        throw InvalidInput("eval-rollout: trajectory shorter than the horizon");
      std::mt19937_64 rng(derive_seed(seed, streams::rollout_starts + static_cast<std::uint64_t>(c.scene)));
      std::uniform_int_distribution<std::size_t> pick(0, steps - static_cast<std::size_t>(horizon));
      std::vector<std::size_t> starts;
      for (int r = 0; r < cfg.rollouts; ++r) starts.push_back(pick(rng));
      const double dt = cfg.truth.dt();
      const FeModel<double> fe{models.basis, coeffs.alpha};
      const NodeIncrementModel<double> nd{models.node};
      for (auto& a : accumulated_mse(fe, s.trajectory, starts, horizon, dt)) c.fenode.push_back(std::move(a));
      for (auto& a : accumulated_mse(nd, s.trajectory, starts, horizon, dt)) c.node.push_back(std::move(a));
    }
  }
  ensure_dir(layout.eval());
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : curves) {
    auto out = open_out(layout.eval() / ("rollout_" + c.role + ".csv"));
    out << "t,fenode_median,fenode_q10,fenode_q90,node_median,node_q10,node_q90\n";
    nlohmann::json jc{{"scene", c.scene}, {"theta", c.theta}, {"role", c.role}};
    for (int t = 0; t <= horizon; ++t) {
      auto column = [t](const std::vector<std::vector<double>>& m) {
        std::vector<double> v;
        for (const auto& row : m) v.push_back(row[static_cast<std::size_t>(t)]);
        return v;
      };
      const auto fe = column(c.fenode), nd = column(c.node);
      const double fm = median(fe), nm = median(nd);
      out << fmt_double(t * cfg.truth.dt()) << ',' << fmt_double(fm) << ','
          << fmt_double(quantile(fe, 0.1)) << ',' << fmt_double(quantile(fe, 0.9)) << ','
          << fmt_double(nm) << ',' << fmt_double(quantile(nd, 0.1)) << ','
          << fmt_double(quantile(nd, 0.9)) << '\n';
      jc["fenode_median"].push_back(fm);
      jc["node_median"].push_back(nm);
    }
    auto monotone = [](const std::vector<std::vector<double>>& m) {
      for (const auto& row : m)
        for (std::size_t t = 1; t < row.size(); ++t)
          if (!(row[t] >= row[t - 1])) return false;
      return true;
    };
    jc["fenode_nondecreasing"] = monotone(c.fenode);
    jc["node_nondecreasing"] = monotone(c.node);
    jc["rollouts"] = c.fenode.size();
    j.push_back(jc);
  }
  write_json_file(layout.eval() / "rollout.json", j);
  record_timing(layout, "eval_rollout_s", clock.seconds());
  return curves;
}

}  // namespace tafe::harness
