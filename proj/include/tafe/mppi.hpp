#pragma once

// Sampling-based receding-horizon control over any increment model.

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tafe/core.hpp"
#include "tafe/io.hpp"
#include "tafe/models.hpp"
#include "tafe/savgol.hpp"
#include "tafe/simworld.hpp"

namespace tafe {

struct DegenerateWeights : NumericError {
  using NumericError::NumericError;
};

struct MppiConfig {
  int r = 1000;    // rollouts per step
  int T = 100;     // horizon steps
  double dt = 0.1;
  double lambda = 1.0;
  Eigen::Vector2d sigma{0.5, 0.5};  // (m/s, rad/s)
  int sg_window = 5;
  int sg_order = 3;
  ControlLimits limits{};
  std::uint64_t seed = 0;

  void validate() const {
    if (r < 1) throw InvalidInput("mppi: r must be >= 1");
    if (T < 1) throw InvalidInput("mppi: T must be >= 1");
    if (!(dt > 0)) throw InvalidInput("mppi: dt must be positive");
    if (!(lambda > 0)) throw InvalidInput("mppi: lambda must be positive");
    if (!(sigma.array() >= 0).all()) throw InvalidInput("mppi: sigma must be non-negative");
    if (sg_window < 1 || sg_window % 2 == 0) throw InvalidInput("mppi: sg_window must be odd");
    if (sg_order < 0 || sg_order >= sg_window) throw InvalidInput("mppi: need sg_order < sg_window");
  }

  static MppiConfig from_kv(const KeyValueFile& kv, const std::string& prefix = "mppi.") {
    MppiConfig c;
    c.r = static_cast<int>(kv.get_int(prefix + "rollouts", c.r));
    c.T = static_cast<int>(kv.get_int(prefix + "horizon", c.T));
    c.dt = kv.get_double(prefix + "dt", c.dt);
    c.lambda = kv.get_double(prefix + "lambda", c.lambda);
    if (kv.has(prefix + "sigma")) {
      const auto s = parse_doubles(kv.get(prefix + "sigma"));
      if (s.size() != 2) throw IoError(prefix + "sigma: expected 2 values");
      c.sigma = {s[0], s[1]};
    }
    c.sg_window = static_cast<int>(kv.get_int(prefix + "sg_window", c.sg_window));
    c.sg_order = static_cast<int>(kv.get_int(prefix + "sg_order", c.sg_order));
    c.limits.v_max = kv.get_double("vehicle.v_max", c.limits.v_max);
    c.limits.w_max = kv.get_double("vehicle.w_max", c.limits.w_max);
    c.seed = static_cast<std::uint64_t>(kv.get_int(prefix + "seed", 0));
    c.validate();
    return c;
  }
};

struct CostSpec {
  double waypoint_weight = 1.0;     // per metre
  double obstacle_penalty = 1000.0;
  double obstacle_inflation = 0.3;  // m, added to obstacle + robot radius
  double terminal_weight = 10.0;
  Eigen::Vector2d beta = Eigen::Vector2d::Zero();

  void validate() const {
    if (!(waypoint_weight >= 0 && obstacle_penalty >= 0 && obstacle_inflation >= 0 &&
          terminal_weight >= 0))
      throw InvalidInput("cost: weights must be non-negative");
    if (!beta.allFinite()) throw InvalidInput("cost: beta must be finite");
  }

  static CostSpec from_kv(const KeyValueFile& kv, const std::string& prefix = "cost.") {
    CostSpec c;
    c.waypoint_weight = kv.get_double(prefix + "waypoint_weight", c.waypoint_weight);
    c.obstacle_penalty = kv.get_double(prefix + "obstacle_penalty", c.obstacle_penalty);
    c.obstacle_inflation = kv.get_double(prefix + "obstacle_inflation", c.obstacle_inflation);
    c.terminal_weight = kv.get_double(prefix + "terminal_weight", c.terminal_weight);
    if (kv.has(prefix + "beta")) {
      const auto b = parse_doubles(kv.get(prefix + "beta"));
      if (b.size() != 2) throw IoError(prefix + "beta: expected 2 values");
      c.beta = {b[0], b[1]};
    }
    c.validate();
    return c;
  }
};

/// 2 x T, column t is the control held over step t.
using ControlSeq = Eigen::Matrix<double, 2, Eigen::Dynamic>;

inline Control control_at(const ControlSeq& u, Eigen::Index t) { return {u(0, t), u(1, t)}; }

inline void clamp_sequence(ControlSeq& u, const ControlLimits& lim) {
  u.row(0) = u.row(0).cwiseMax(-lim.v_max).cwiseMin(lim.v_max);
  u.row(1) = u.row(1).cwiseMax(-lim.w_max).cwiseMin(lim.w_max);
}

/// V_i = clamp(U + eps_i), eps ~ N(0, diag(sigma^2)).
inline std::vector<ControlSeq> sample_controls(const ControlSeq& mean, const MppiConfig& cfg,
                                               std::uint64_t seed) {
  if (mean.cols() != cfg.T) throw InvalidInput("sample_controls: mean sequence length != T");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ControlSeq> out(static_cast<std::size_t>(cfg.r), mean);
  for (auto& v : out) {
    for (Eigen::Index t = 0; t < cfg.T; ++t) {
      v(0, t) += cfg.sigma[0] * normal(rng);
      v(1, t) += cfg.sigma[1] * normal(rng);
    }
    clamp_sequence(v, cfg.limits);
  }
  return out;
}

namespace detail {
/// Column of a rollout state matrix. Headings there are already wrapped, and
/// diverged columns hold NaN, so no re-wrapping.
inline State column_state(const Mat<double>& s, Eigen::Index i) {
  return {s(0, i), s(1, i), s(2, i), s(3, i), s(4, i), s(5, i)};
}
}  // namespace detail

/// Propagate sequence i from x0[i], all in one batched pass. `visit(t, states)`
/// sees the 6 x r inertial states after step t (t = 0 is the start); invalid
/// columns are NaN.
template <IncrementModel M, class Visit>
void rollout_batch(const M& model, const std::vector<State>& x0, const std::vector<ControlSeq>& seqs,
                   double dt, Visit&& visit) {
  if (seqs.empty()) return;
  if (x0.size() != seqs.size()) throw InvalidInput("rollout: one start state per sequence");
  const auto r = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index T = seqs.front().cols();
  for (const auto& s : seqs)
    if (s.cols() != T) throw InvalidInput("rollout: sequences differ in length");

  const double nan = std::numeric_limits<double>::quiet_NaN();
  Mat<double> states(kStateDim, r);
  std::vector<char> valid(static_cast<std::size_t>(r), 1);
  for (Eigen::Index i = 0; i < r; ++i) {
    const State& s = x0[static_cast<std::size_t>(i)];
    valid[static_cast<std::size_t>(i)] = s.finite() ? 1 : 0;
    if (s.finite())
      states.col(i) = s.vec();
    else
      states.col(i).setConstant(nan);
  }
  visit(Eigen::Index{0}, std::as_const(states));

  Mat<double> body(kStateDim, r), controls(kControlDim, r);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index i = 0; i < r; ++i) {
      const bool ok = valid[static_cast<std::size_t>(i)];
      body.col(i) << 0.0, 0.0, 0.0, ok ? states(3, i) : 0.0, ok ? states(4, i) : 0.0,
          ok ? states(5, i) : 0.0;
      controls.col(i) = seqs[static_cast<std::size_t>(i)].col(t);
    }
    const Mat<double> inc = model.predict(body, controls, dt);
    for (Eigen::Index i = 0; i < r; ++i) {
      auto& ok = valid[static_cast<std::size_t>(i)];
      if (!ok) continue;
      const Vec6 d = inc.col(i);
      const State next = d.allFinite() ? compose_body_delta(detail::column_state(states, i), d, dt)
                                       : State{nan, nan, nan, nan, nan, nan};
      if (next.finite()) {
        states.col(i) = next.vec();
      } else {
        ok = 0;
        states.col(i).setConstant(nan);
      }
    }
    visit(t + 1, std::as_const(states));
  }
}

template <IncrementModel M, class Visit>
void rollout_batch(const M& model, const State& x0, const std::vector<ControlSeq>& seqs, double dt,
                   Visit&& visit) {
  rollout_batch(model, std::vector<State>(seqs.size(), x0), seqs, dt, std::forward<Visit>(visit));
}

/// Single-sequence rollout; a diverged rollout carries NaN states from that point on.
template <IncrementModel M>
Trajectory rollout(const M& model, const State& x0, const ControlSeq& v, double dt) {
  Trajectory traj;
  const std::vector<ControlSeq> one{v};
  rollout_batch(model, x0, one, dt, [&](Eigen::Index t, const Mat<double>& s) {
    traj.times.push_back(static_cast<double>(t) * dt);
    traj.states.push_back(detail::column_state(s, 0));
  });
  for (Eigen::Index t = 0; t < v.cols(); ++t) traj.controls.push_back(control_at(v, t));
  return traj;
}

namespace detail {
inline double distance_to(const State& x, const World& world, std::size_t waypoint) {
  if (waypoint >= world.waypoints.size()) return 0.0;
  const auto& c = world.waypoints[waypoint].center;
  return std::hypot(x.px - c.x, x.py - c.y);
}
}  // namespace detail

/// c(x): distance to the active waypoint plus a flat penalty inside any inflated obstacle.
inline double stage_cost(const State& x, const World& world, const CostSpec& cost,
                         std::size_t waypoint) {
  double c = cost.waypoint_weight * detail::distance_to(x, world, waypoint);
  for (const auto& o : world.obstacles) {
    const double reach = o.radius + world.robot_radius + cost.obstacle_inflation;
    if (std::hypot(x.px - o.center.x, x.py - o.center.y) < reach) {
      c += cost.obstacle_penalty;
      break;
    }
  }
  return c;
}

inline double terminal_cost(const State& x, const World& world, const CostSpec& cost,
                            std::size_t waypoint) {
  return cost.terminal_weight * detail::distance_to(x, world, waypoint);
}

/// phi(x_T) + sum_{t<T} c(x_t); +inf when any state is non-finite.
inline double state_cost(const Trajectory& traj, const World& world, const CostSpec& cost,
                         std::size_t waypoint = 0) {
  if (traj.states.empty()) throw InvalidInput("state_cost: empty trajectory");
  for (const auto& x : traj.states)
    if (!x.finite()) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < traj.states.size(); ++t)
    s += stage_cost(traj.states[t], world, cost, waypoint);
  return s + terminal_cost(traj.states.back(), world, cost, waypoint);
}

/// Batched rollout followed by state_cost on every sample.
template <IncrementModel M>
Eigen::VectorXd rollout_costs(const M& model, const State& x0, const std::vector<ControlSeq>& seqs,
                              double dt, const World& world, const CostSpec& cost,
                              std::size_t waypoint = 0) {
  const auto r = static_cast<Eigen::Index>(seqs.size());
  const Eigen::Index T = seqs.empty() ? 0 : seqs.front().cols();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(r);
  rollout_batch(model, x0, seqs, dt, [&](Eigen::Index t, const Mat<double>& s) {
    for (Eigen::Index i = 0; i < r; ++i) {
      if (!std::isfinite(acc[i])) continue;
      const State x = detail::column_state(s, i);
      if (!x.finite()) {
        acc[i] = std::numeric_limits<double>::infinity();
        continue;
      }
      acc[i] += t == T ? terminal_cost(x, world, cost, waypoint)
                       : stage_cost(x, world, cost, waypoint);
    }
  });
  return acc;
}

/// Control cost of a mean sequence: (lambda / 2) sum_t (u^T Sigma^-1 u + beta^T u).
inline double control_cost(const ControlSeq& u, const MppiConfig& cfg, const CostSpec& cost) {
  double c = 0.0;
  for (Eigen::Index t = 0; t < u.cols(); ++t)
    for (int k = 0; k < kControlDim; ++k) {
      const double s2 = cfg.sigma[k] * cfg.sigma[k];
      c += (s2 > 0 ? u(k, t) * u(k, t) / s2 : 0.0) + cost.beta[k] * u(k, t);
    }
  return 0.5 * cfg.lambda * c;
}

/// w_i = exp(-(total_i - min) / lambda) / Z with total_i = S_i + control_cost(U).
/// The control term is charged on the mean sequence U, so it is common to all
/// samples and drops out after the min subtraction.
inline Eigen::VectorXd weights(const Eigen::VectorXd& costs, const ControlSeq& mean,
                               const MppiConfig& cfg, const CostSpec& cost) {
  const Eigen::Index r = costs.size();
  if (r < 1) throw InvalidInput("weights: no costs");
  const double ctrl = control_cost(mean, cfg, cost);
  const Eigen::VectorXd total = costs.array() + ctrl;
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < r; ++i)
    if (std::isfinite(total[i])) lo = std::min(lo, total[i]);
  if (!std::isfinite(lo)) throw DegenerateWeights("weights: every rollout cost is infinite");
  Eigen::VectorXd w(r);
  for (Eigen::Index i = 0; i < r; ++i)
    w[i] = std::isfinite(total[i]) ? std::exp(-(total[i] - lo) / cfg.lambda) : 0.0;
  return w / w.sum();
}

/// Weighted average of the samples, smoothed per channel along t, then clamped.
inline ControlSeq update_and_smooth(const std::vector<ControlSeq>& seqs, const Eigen::VectorXd& w,
                                    const MppiConfig& cfg) {
  if (seqs.empty() || static_cast<Eigen::Index>(seqs.size()) != w.size())
    throw InvalidInput("update: weights and sequences differ in count");
  ControlSeq u = ControlSeq::Zero(2, seqs.front().cols());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const double wi = w[static_cast<Eigen::Index>(i)];
    if (wi != 0.0) u += wi * seqs[i];
  }
  for (int c = 0; c < kControlDim; ++c) {
    std::vector<double> row(static_cast<std::size_t>(u.cols()));
    for (Eigen::Index t = 0; t < u.cols(); ++t) row[static_cast<std::size_t>(t)] = u(c, t);
    const auto smooth = savgol_filter(row, cfg.sg_window, cfg.sg_order);
    for (Eigen::Index t = 0; t < u.cols(); ++t) u(c, t) = smooth[static_cast<std::size_t>(t)];
  }
  clamp_sequence(u, cfg.limits);
  return u;
}

struct StepDiagnostics {
  std::uint64_t step = 0;
  double min_cost = 0.0;
  double mean_cost = 0.0;  // over finite costs
  double ess = 0.0;        // 1 / sum w^2
  std::size_t invalid = 0;
  bool degenerate = false;
};

inline void write_diagnostics_header(std::ostream& out) {
  out << "step,min_cost,mean_cost,ess,invalid,degenerate\n";
}

inline void append_diagnostics(std::ostream& out, const StepDiagnostics& d) {
  out << d.step << ',' << fmt_double(d.min_cost) << ',' << fmt_double(d.mean_cost) << ','
      << fmt_double(d.ess) << ',' << d.invalid << ',' << (d.degenerate ? 1 : 0) << '\n';
}

class MppiController {
 public:
  MppiController(MppiConfig cfg, CostSpec cost) : MppiController(cfg, cost, ControlSeq::Zero(2, cfg.T)) {}

  MppiController(MppiConfig cfg, CostSpec cost, ControlSeq init)
      : cfg_(cfg), cost_(cost), plan_(std::move(init)) {
    cfg_.validate();
    cost_.validate();
    if (plan_.cols() != cfg_.T) throw InvalidInput("mppi: initial plan length != T");
    clamp_sequence(plan_, cfg_.limits);
    last_u_ = control_at(plan_, 0);
  }

  /// One receding-horizon iteration. The model is only read.
  template <IncrementModel M>
  Control step(const M& model, const State& x, const World& world, std::size_t waypoint = 0) {
    const auto seqs = sample_controls(plan_, cfg_, derive_seed(cfg_.seed, step_));
    const Eigen::VectorXd costs = rollout_costs(model, x, seqs, cfg_.dt, world, cost_, waypoint);
    diag_ = {};
    diag_.step = step_;
    ++step_;
    summarize(costs);
    Control u = last_u_;
    try {
      const Eigen::VectorXd w = weights(costs, plan_, cfg_, cost_);
      diag_.ess = 1.0 / w.squaredNorm();
      plan_ = update_and_smooth(seqs, w, cfg_);
      u = control_at(plan_, 0);
    } catch (const DegenerateWeights&) {
      diag_.degenerate = true;
    }
    shift();
    last_u_ = u;
    return u;
  }

  [[nodiscard]] const ControlSeq& plan() const { return plan_; }
  [[nodiscard]] const StepDiagnostics& diagnostics() const { return diag_; }
  [[nodiscard]] const MppiConfig& config() const { return cfg_; }
  [[nodiscard]] const CostSpec& cost() const { return cost_; }
  [[nodiscard]] std::uint64_t steps() const { return step_; }

 private:
  void shift() {
    const Eigen::Index T = plan_.cols();
    if (T > 1) plan_.leftCols(T - 1) = plan_.rightCols(T - 1).eval();
  }

  void summarize(const Eigen::VectorXd& costs) {
    double lo = std::numeric_limits<double>::infinity(), sum = 0.0;
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < costs.size(); ++i) {
      if (!std::isfinite(costs[i])) continue;
      lo = std::min(lo, costs[i]);
      sum += costs[i];
      ++n;
    }
    diag_.min_cost = lo;
    diag_.mean_cost = n ? sum / static_cast<double>(n) : std::numeric_limits<double>::infinity();
    diag_.invalid = static_cast<std::size_t>(costs.size()) - n;
  }

  MppiConfig cfg_;
  CostSpec cost_;
  ControlSeq plan_;
  Control last_u_{};
  StepDiagnostics diag_{};
  std::uint64_t step_ = 0;
};

}  // namespace tafe
