#pragma once

// Ground-truth skid-steer simulator over a friction-parameterized terrain
// family, obstacle worlds, and the data-collection driver.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "tafe/core.hpp"
#include "tafe/io.hpp"
#include "tafe/rk4.hpp"

namespace tafe {

/// Tire friction curve in the usual extremum/asymptote parameterization.
struct FrictionCurve {
  double extremum_slip = 0.4;
  double extremum_value = 1.0;
  double asymptote_slip = 0.8;
  double asymptote_value = 0.75;
  double stiffness = 1.0;

  [[nodiscard]] bool valid() const {
    return extremum_slip > 0 && extremum_value > 0 && asymptote_slip > 0 && asymptote_value > 0 &&
           stiffness > 0 && asymptote_slip >= extremum_slip && asymptote_value <= extremum_value;
  }

  static FrictionCurve mix(const FrictionCurve& a, const FrictionCurve& b, double theta) {
    auto lerp = [theta](double x, double y) { return theta * x + (1.0 - theta) * y; };
    return {lerp(a.extremum_slip, b.extremum_slip), lerp(a.extremum_value, b.extremum_value),
            lerp(a.asymptote_slip, b.asymptote_slip), lerp(a.asymptote_value, b.asymptote_value),
            lerp(a.stiffness, b.stiffness)};
  }

  friend bool operator==(const FrictionCurve&, const FrictionCurve&) = default;
};

struct TerrainParams {
  double theta = 1.0;
  FrictionCurve forward;
  FrictionCurve lateral;
};

/// Endpoint curves and vehicle gains. `a` is the high-friction end (theta = 1).
struct TruthConfig {
  FrictionCurve a_forward{0.4, 1.0, 0.8, 0.75, 1.0};
  FrictionCurve a_lateral{0.4, 1.0, 0.8, 0.75, 1.0};
  FrictionCurve b_forward{0.4, 0.15, 0.8, 0.10, 0.2};
  FrictionCurve b_lateral{0.4, 0.15, 0.8, 0.10, 0.2};
  double k_acc = 2.5;   // 1/s
  double k_lat = 3.0;   // 1/s
  double k_yaw = 4.0;   // 1/s
  double g_eff = 3.0;   // m/s^2
  double g_yaw = 4.0;   // rad/s^2
  double rate_hz = 10.0;
  int substeps = 4;
  ControlLimits limits{};

  static TruthConfig from_kv(const KeyValueFile& kv) {
    TruthConfig c;
    auto curve = [&kv](const std::string& prefix, FrictionCurve fallback) {
      if (!kv.has(prefix)) return fallback;
      const auto v = parse_doubles(kv.get(prefix));
      if (v.size() != 5) throw IoError(prefix + ": expected 5 values");
      FrictionCurve fc{v[0], v[1], v[2], v[3], v[4]};
      if (!fc.valid()) throw InvalidInput(prefix + ": invalid friction curve");
      return fc;
    };
    c.a_forward = curve("terrain.a.forward", c.a_forward);
    c.a_lateral = curve("terrain.a.lateral", c.a_lateral);
    c.b_forward = curve("terrain.b.forward", c.b_forward);
    c.b_lateral = curve("terrain.b.lateral", c.b_lateral);
    c.k_acc = kv.get_double("vehicle.k_acc", c.k_acc);
    c.k_lat = kv.get_double("vehicle.k_lat", c.k_lat);
    c.k_yaw = kv.get_double("vehicle.k_yaw", c.k_yaw);
    c.g_eff = kv.get_double("vehicle.g_eff", c.g_eff);
    c.g_yaw = kv.get_double("vehicle.g_yaw", c.g_yaw);
    c.rate_hz = kv.get_double("sim.rate_hz", c.rate_hz);
    c.substeps = static_cast<int>(kv.get_int("sim.substeps", c.substeps));
    c.limits.v_max = kv.get_double("vehicle.v_max", c.limits.v_max);
    c.limits.w_max = kv.get_double("vehicle.w_max", c.limits.w_max);
    return c;
  }

  [[nodiscard]] double dt() const { return 1.0 / rate_hz; }
};

/// Element-wise theta*a + (1-theta)*b. Theta outside [0, 1] extrapolates.
inline TerrainParams terrain_from_theta(double theta, const TruthConfig& cfg = {}) {
  return {theta, FrictionCurve::mix(cfg.a_forward, cfg.b_forward, theta),
          FrictionCurve::mix(cfg.a_lateral, cfg.b_lateral, theta)};
}

/// Friction gains normalized to 1 at the high-friction endpoint.
struct FrictionGains {
  double forward = 1.0;
  double lateral = 1.0;
};

inline FrictionGains friction_gains(const TerrainParams& t, const TruthConfig& cfg = {}) {
  return {t.forward.extremum_value * t.forward.stiffness /
              (cfg.a_forward.extremum_value * cfg.a_forward.stiffness),
          t.lateral.extremum_value * t.lateral.stiffness /
              (cfg.a_lateral.extremum_value * cfg.a_lateral.stiffness)};
}

inline double saturate(double v, double limit) { return std::clamp(v, -limit, limit); }

/// Time derivative of the full state (inertial pose, body velocities).
inline Vec6 truth_field(const Vec6& x, const Control& u, const TerrainParams& terrain,
                        const TruthConfig& cfg = {}) {
  const FrictionGains mu = friction_gains(terrain, cfg);
  const double psi = x[2], vx = x[3], vy = x[4], wz = x[5];
  const double c = std::cos(psi), s = std::sin(psi);
  Vec6 d;
  d[0] = vx * c - vy * s;
  d[1] = vx * s + vy * c;
  d[2] = wz;
  d[3] = saturate(cfg.k_acc * (u.v_cmd - vx), mu.forward * cfg.g_eff) + vy * wz;
  d[4] = -vx * wz - mu.lateral * cfg.k_lat * vy;
  d[5] = saturate(cfg.k_yaw * (u.w_cmd - wz), mu.forward * cfg.g_yaw);
  return d;
}

inline State step_truth(const State& x, const Control& u, const TerrainParams& terrain, double dt,
                        const TruthConfig& cfg = {}) {
  if (!(dt > 0.0)) throw InvalidInput("step_truth: dt must be positive");
  Vec6 y = x.vec();
  y[2] = 0.0;  // integrate heading relative to the start, then re-wrap
  const Vec6 out = rk4_integrate(y, dt, cfg.substeps, [&](const Vec6& s) {
    Vec6 full = s;
    full[2] += x.psi;
    return truth_field(full, u, terrain, cfg);
  });
  const double psi = x.psi + out[2];
  // A non-finite result is returned as is for the caller to detect.
  return {out[0], out[1], std::isfinite(psi) ? wrap_angle(psi) : psi, out[3], out[4], out[5]};
}

// ---------------------------------------------------------------------------
// Worlds

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Obstacle {
  Vec2 center;
  double radius = 0.0;
};

struct Waypoint {
  Vec2 center;
  double radius = 0.0;  // proximity radius
};

struct Bounds {
  double xmin = -50, ymin = -50, xmax = 50, ymax = 50;
  [[nodiscard]] bool contains(Vec2 p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
};

struct World {
  std::vector<Obstacle> obstacles;
  std::vector<Waypoint> waypoints;
  Bounds bounds;
  double robot_radius = 0.5;
  State start;

  void validate() const {
    if (!(robot_radius > 0)) throw InvalidInput("world: robot_radius must be positive");
    for (const auto& o : obstacles)
      if (!(o.radius > 0)) throw InvalidInput("world: obstacle radius must be positive");
    for (const auto& w : waypoints) {
      if (!(w.radius > 0)) throw InvalidInput("world: waypoint radius must be positive");
      if (!bounds.contains(w.center)) throw InvalidInput("world: waypoint outside bounds");
    }
  }

  /// Schema: robot_radius, bounds = xmin ymin xmax ymax, start = x y psi,
  /// and repeated `obstacle = x y r` / `waypoint = x y r` lines (waypoints in visit order).
  static World from_kv(const KeyValueFile& kv) {
    World w;
    w.robot_radius = kv.get_double("robot_radius", w.robot_radius);
    if (kv.has("bounds")) {
      const auto b = parse_doubles(kv.get("bounds"));
      if (b.size() != 4) throw IoError("bounds: expected 4 values");
      w.bounds = {b[0], b[1], b[2], b[3]};
    }
    if (kv.has("start")) {
      const auto s = parse_doubles(kv.get("start"));
      if (s.size() != 3) throw IoError("start: expected 3 values");
      w.start = {s[0], s[1], wrap_angle(s[2]), 0, 0, 0};
    }
    for (const auto& line : kv.get_all("obstacle")) {
      const auto v = parse_doubles(line);
      if (v.size() != 3) throw IoError("obstacle: expected 3 values");
      w.obstacles.push_back({{v[0], v[1]}, v[2]});
    }
    for (const auto& line : kv.get_all("waypoint")) {
      const auto v = parse_doubles(line);
      if (v.size() != 3) throw IoError("waypoint: expected 3 values");
      w.waypoints.push_back({{v[0], v[1]}, v[2]});
    }
    w.validate();
    return w;
  }

  [[nodiscard]] KeyValueFile to_kv() const {
    KeyValueFile kv;
    kv.add("robot_radius", fmt_double(robot_radius));
    kv.add("bounds", fmt_double(bounds.xmin) + " " + fmt_double(bounds.ymin) + " " +
                         fmt_double(bounds.xmax) + " " + fmt_double(bounds.ymax));
    kv.add("start", fmt_double(start.px) + " " + fmt_double(start.py) + " " + fmt_double(start.psi));
    for (const auto& o : obstacles)
      kv.add("obstacle", fmt_double(o.center.x) + " " + fmt_double(o.center.y) + " " +
                             fmt_double(o.radius));
    for (const auto& p : waypoints)
      kv.add("waypoint", fmt_double(p.center.x) + " " + fmt_double(p.center.y) + " " +
                             fmt_double(p.radius));
    return kv;
  }
};

inline bool check_collision(const State& x, const World& world) {
  for (const auto& o : world.obstacles) {
    const double dx = x.px - o.center.x, dy = x.py - o.center.y;
    if (std::hypot(dx, dy) < o.radius + world.robot_radius) return true;
  }
  return false;
}

/// Index of the active waypoint; equals waypoints.size() once all are reached.
inline std::size_t waypoint_progress(const State& x, const World& world, std::size_t current) {
  if (current >= world.waypoints.size()) return world.waypoints.size();
  const auto& wp = world.waypoints[current];
  if (std::hypot(x.px - wp.center.x, x.py - wp.center.y) <= wp.radius) return current + 1;
  return current;
}

// ---------------------------------------------------------------------------
// Data collection

struct ExcitationConfig {
  double goal_min = 4.0;   // m, distance of the next random goal
  double goal_max = 12.0;
  double goal_radius = 1.5;
  double v_nominal = 1.5;
  double k_heading = 1.5;
  double ou_rate = 0.8;     // 1/s mean reversion
  double ou_sigma_v = 0.8;  // stationary std of the velocity perturbation
  double ou_sigma_w = 0.8;
  double initial_speed = 1.5;  // rolling start, m/s forward
};

/// Waypoint-chasing proportional driver plus Ornstein-Uhlenbeck perturbations.
class ExcitationPolicy {
 public:
  ExcitationPolicy(std::uint64_t seed, ExcitationConfig cfg, ControlLimits limits)
      : rng_(seed), cfg_(cfg), limits_(limits) {}

  Control operator()(const State& x, double dt) {
    if (!has_goal_ || std::hypot(goal_.x - x.px, goal_.y - x.py) < cfg_.goal_radius) new_goal(x);
    const double bearing = std::atan2(goal_.y - x.py, goal_.x - x.px);
    const double err = wrap_angle(bearing - x.psi);
    Control u{cfg_.v_nominal * std::max(std::cos(err), 0.1), cfg_.k_heading * err};
    const double decay = std::exp(-cfg_.ou_rate * dt);
    const double spread = std::sqrt(1.0 - decay * decay);
    ou_v_ = decay * ou_v_ + cfg_.ou_sigma_v * spread * normal_(rng_);
    ou_w_ = decay * ou_w_ + cfg_.ou_sigma_w * spread * normal_(rng_);
    u.v_cmd += ou_v_;
    u.w_cmd += ou_w_;
    return limits_.clamp(u);
  }

 private:
  void new_goal(const State& x) {
    std::uniform_real_distribution<double> dist(cfg_.goal_min, cfg_.goal_max);
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
    const double r = dist(rng_), a = ang(rng_);
    goal_ = {x.px + r * std::cos(a), x.py + r * std::sin(a)};
    has_goal_ = true;
  }

  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  ExcitationConfig cfg_;
  ControlLimits limits_;
  Vec2 goal_{};
  bool has_goal_ = false;
  double ou_v_ = 0.0;
  double ou_w_ = 0.0;
};

struct Collected {
  Trajectory trajectory;
  Dataset dataset;
};

/// Drive the truth simulator for `duration` seconds logged at cfg.rate_hz.
inline Collected collect_dataset(const TerrainParams& terrain, double duration, std::uint64_t seed,
                                 const TruthConfig& cfg = {}, const ExcitationConfig& ex = {},
                                 const std::string& terrain_id = "") {
  if (!(duration > 0.0)) throw InvalidInput("collect_dataset: duration must be positive");
  const auto samples = static_cast<std::size_t>(std::llround(duration * cfg.rate_hz));
  if (samples < 2) throw InvalidInput("collect_dataset: duration shorter than two samples");
  const double dt = cfg.dt();
  ExcitationPolicy policy(seed, ex, cfg.limits);
  std::mt19937_64 init_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> heading(-std::numbers::pi, std::numbers::pi);

  Collected out;
  Trajectory& traj = out.trajectory;
  State x{0.0, 0.0, wrap_angle(heading(init_rng)), ex.initial_speed, 0.0, 0.0};
  for (std::size_t i = 0; i < samples; ++i) {
    traj.times.push_back(static_cast<double>(i) * dt);
    traj.states.push_back(x);
    if (i + 1 == samples) break;
    const Control u = policy(x, dt);
    traj.controls.push_back(u);
    x = step_truth(x, u, terrain, dt, cfg);
  }
  out.dataset = build_dataset(traj, terrain_id, terrain.theta);
  return out;
}

}  // namespace tafe
