#pragma once

// Shared domain types: vehicle state, controls, transitions, datasets and the
// body-frame transforms that turn inertial logs into training pairs.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace tafe {

inline constexpr int kStateDim = 6;
inline constexpr int kControlDim = 2;

using Vec6 = Eigen::Matrix<double, kStateDim, 1>;

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reduce an angle to (-pi, pi].
inline double wrap_angle(double a) {
  if (!std::isfinite(a)) throw InvalidInput("wrap_angle: non-finite angle");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, two_pi);  // [-pi, pi]
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

/// Planar pose plus body-frame velocities, ordered (px, py, psi, vx, vy, wz)
/// everywhere including files.
struct State {
  double px = 0.0;
  double py = 0.0;
  double psi = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;

  [[nodiscard]] Vec6 vec() const { return {px, py, psi, vx, vy, wz}; }

  static State from_vec(const Vec6& v) {
    return {v[0], v[1], wrap_angle(v[2]), v[3], v[4], v[5]};
  }

  [[nodiscard]] bool finite() const {
    return std::isfinite(px) && std::isfinite(py) && std::isfinite(psi) &&
           std::isfinite(vx) && std::isfinite(vy) && std::isfinite(wz);
  }

  /// Same velocities with the pose zeroed.
  [[nodiscard]] State bodyified() const { return {0.0, 0.0, 0.0, vx, vy, wz}; }

  friend bool operator==(const State&, const State&) = default;
};

struct Control {
  double v_cmd = 0.0;
  double w_cmd = 0.0;
  friend bool operator==(const Control&, const Control&) = default;
};

struct ControlLimits {
  double v_max = 2.0;
  double w_max = 1.5;

  [[nodiscard]] Control clamp(Control u) const {
    return {std::clamp(u.v_cmd, -v_max, v_max), std::clamp(u.w_cmd, -w_max, w_max)};
  }
};

struct Transition {
  State x;  // pose zeroed
  Control u;
  double dt = 0.0;
  Vec6 dx = Vec6::Zero();
};

struct Dataset {
  std::string terrain_id;
  double theta = 0.0;
  std::vector<Transition> transitions;

  [[nodiscard]] std::size_t size() const { return transitions.size(); }
  [[nodiscard]] bool empty() const { return transitions.empty(); }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<State> states;
  std::vector<Control> controls;  // controls[i] acts over [times[i], times[i+1])

  [[nodiscard]] std::size_t size() const { return states.size(); }

  void validate() const {
    if (times.size() != states.size())
      throw InvalidInput("trajectory: times/states length mismatch");
    if (!states.empty() && controls.size() + 1 != states.size())
      throw InvalidInput("trajectory: controls must have length states - 1");
    for (std::size_t i = 1; i < times.size(); ++i)
      if (!(times[i] > times[i - 1])) throw InvalidInput("trajectory: times not strictly increasing");
  }
};

/// Express the step x_t -> x_next as a body-frame increment anchored at x_t.
inline Transition body_frame_delta(const State& x_t, const State& x_next, double dt,
                                   const Control& u = {}) {
  if (!(dt > 0.0)) throw InvalidInput("body_frame_delta: dt must be positive");
  const double c = std::cos(x_t.psi);
  const double s = std::sin(x_t.psi);
  const double dpx = x_next.px - x_t.px;
  const double dpy = x_next.py - x_t.py;
  Transition tr;
  tr.x = x_t.bodyified();
  tr.u = u;
  tr.dt = dt;
  tr.dx << c * dpx + s * dpy, -s * dpx + c * dpy, wrap_angle(x_next.psi - x_t.psi),
      x_next.vx - x_t.vx, x_next.vy - x_t.vy, x_next.wz - x_t.wz;
  if (!tr.dx.allFinite()) throw NumericError("body_frame_delta: non-finite increment");
  return tr;
}

/// Inverse of body_frame_delta: apply a body-frame increment to an inertial state.
inline State compose_body_delta(const State& x_t, const Vec6& dx, double dt) {
  if (!(dt > 0.0)) throw InvalidInput("compose_body_delta: dt must be positive");
  const double c = std::cos(x_t.psi);
  const double s = std::sin(x_t.psi);
  State out;
  out.px = x_t.px + c * dx[0] - s * dx[1];
  out.py = x_t.py + s * dx[0] + c * dx[1];
  out.psi = wrap_angle(x_t.psi + dx[2]);
  out.vx = x_t.vx + dx[3];
  out.vy = x_t.vy + dx[4];
  out.wz = x_t.wz + dx[5];
  return out;
}

inline Dataset build_dataset(const Trajectory& traj, std::string terrain_id, double theta) {
  traj.validate();
  if (traj.size() < 2) throw InvalidInput("build_dataset: trajectory needs at least 2 states");
  Dataset ds{std::move(terrain_id), theta, {}};
  ds.transitions.reserve(traj.size() - 1);
  for (std::size_t i = 0; i + 1 < traj.size(); ++i)
    ds.transitions.push_back(body_frame_delta(traj.states[i], traj.states[i + 1],
                                              traj.times[i + 1] - traj.times[i], traj.controls[i]));
  return ds;
}

/// Squared state error with the heading difference wrapped, averaged over components.
inline double state_mse(const State& a, const State& b) {
  const double d[kStateDim] = {a.px - b.px, a.py - b.py, wrap_angle(a.psi - b.psi),
                               a.vx - b.vx, a.vy - b.vy, a.wz - b.wz};
  double s = 0.0;
  for (double v : d) s += v * v;
  return s / kStateDim;
}

}  // namespace tafe
