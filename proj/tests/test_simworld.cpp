#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "tafe/simworld.hpp"

using namespace tafe;

namespace {
State run(State x, Control u, const TerrainParams& t, double seconds, double dt = 0.1) {
  const int n = static_cast<int>(std::lround(seconds / dt));
  for (int i = 0; i < n; ++i) x = step_truth(x, u, t, dt);
  return x;
}

double kinetic(const State& x) { return x.vx * x.vx + x.vy * x.vy + x.wz * x.wz; }
}  // namespace

TEST(Terrain, EndpointsReproduceTheConfiguredCurves) {
  const TruthConfig cfg;
  EXPECT_EQ(terrain_from_theta(1.0).forward, cfg.a_forward);
  EXPECT_EQ(terrain_from_theta(1.0).lateral, cfg.a_lateral);
  EXPECT_EQ(terrain_from_theta(0.0).forward, cfg.b_forward);
  EXPECT_EQ(terrain_from_theta(0.0).lateral, cfg.b_lateral);
}

TEST(Terrain, ParametersAreAffineInTheta) {
  const auto a = terrain_from_theta(0.2), b = terrain_from_theta(0.6), m = terrain_from_theta(0.4);
  EXPECT_NEAR(m.forward.extremum_value, 0.5 * (a.forward.extremum_value + b.forward.extremum_value), 1e-15);
  EXPECT_NEAR(m.lateral.stiffness, 0.5 * (a.lateral.stiffness + b.lateral.stiffness), 1e-15);
  EXPECT_NEAR(m.forward.asymptote_value, 0.5 * (a.forward.asymptote_value + b.forward.asymptote_value), 1e-15);
  for (double th : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    EXPECT_TRUE(terrain_from_theta(th).forward.valid());
    EXPECT_TRUE(terrain_from_theta(th).lateral.valid());
  }
}

TEST(Truth, RestIsAnEquilibrium) {
  for (double th : {0.0, 0.5, 1.0}) {
    const State x = run(State{}, Control{}, terrain_from_theta(th), 5.0);
    EXPECT_EQ(x, State{});
  }
}

TEST(Truth, StraightCommandOnHighFrictionReachesTheCommandedSpeed) {
  const State x = run(State{}, {2.0, 0.0}, terrain_from_theta(1.0), 20.0);
  EXPECT_NEAR(x.vx, 2.0, 1e-3);
  EXPECT_NEAR(x.vy, 0.0, 1e-12);
  EXPECT_NEAR(x.wz, 0.0, 1e-12);
  EXPECT_NEAR(x.py, 0.0, 1e-12);
}

TEST(Truth, AccelerationIsFrictionLimited) {
  // Accelerating from rest the forward rate is capped at mu * g_eff.
  const TruthConfig cfg;
  const auto ice = terrain_from_theta(0.0);
  const double cap = friction_gains(ice).forward * cfg.g_eff;
  const State x = step_truth(State{}, {2.0, 0.0}, ice, 0.1);
  EXPECT_NEAR(x.vx, cap * 0.1, 1e-12);
}

TEST(Truth, LateralVelocityDecaysSlowerOnLowFriction) {
  const State x0{0, 0, 0, 0, 1.0, 0};
  const double ice = std::abs(run(x0, {}, terrain_from_theta(0.0), 1.0).vy);
  const double grip = std::abs(run(x0, {}, terrain_from_theta(1.0), 1.0).vy);
  EXPECT_GT(ice, grip);
  EXPECT_LT(grip, 0.1);
}

TEST(Truth, KineticEnergyNeverIncreasesWithoutCommand) {
  for (double th : {0.0, 0.5, 1.0}) {
    State x{0, 0, 0.3, 1.8, -0.7, 1.2};
    double e = kinetic(x);
    for (int i = 0; i < 100; ++i) {
      x = step_truth(x, {}, terrain_from_theta(th), 0.1);
      const double n = kinetic(x);
      EXPECT_LE(n, e + 1e-12);
      e = n;
    }
  }
}

TEST(Truth, HeadingStaysWrapped) {
  State x{};
  for (int i = 0; i < 400; ++i) {
    x = step_truth(x, {0.5, 1.5}, terrain_from_theta(1.0), 0.1);
    EXPECT_GT(x.psi, -std::numbers::pi);
    EXPECT_LE(x.psi, std::numbers::pi);
  }
}

TEST(Collect, OneSecondGivesTenSamples) {
  const auto c = collect_dataset(terrain_from_theta(0.5), 1.0, 3);
  EXPECT_EQ(c.trajectory.size(), 10u);
  EXPECT_EQ(c.dataset.size(), 9u);
  EXPECT_NO_THROW(c.trajectory.validate());
}

TEST(Collect, IsDeterministicInTheSeed) {
  const auto a = collect_dataset(terrain_from_theta(0.3), 10.0, 42);
  const auto b = collect_dataset(terrain_from_theta(0.3), 10.0, 42);
  const auto c = collect_dataset(terrain_from_theta(0.3), 10.0, 43);
  EXPECT_EQ(a.trajectory.states, b.trajectory.states);
  EXPECT_NE(a.trajectory.states, c.trajectory.states);
}

TEST(Collect, ControlsRespectLimits) {
  const ControlLimits lim;
  const auto c = collect_dataset(terrain_from_theta(0.8), 60.0, 5);
  for (const auto& u : c.trajectory.controls) {
    EXPECT_LE(std::abs(u.v_cmd), lim.v_max);
    EXPECT_LE(std::abs(u.w_cmd), lim.w_max);
  }
}

TEST(Collect, IceSlidesMoreThanGrip) {
  auto vy_std = [](const Trajectory& t) {
    double s = 0, q = 0;
    for (const auto& x : t.states) {
      s += x.vy;
      q += x.vy * x.vy;
    }
    const double n = static_cast<double>(t.size());
    return std::sqrt(q / n - (s / n) * (s / n));
  };
  const auto ice = collect_dataset(terrain_from_theta(0.0), 60.0, 11).trajectory;
  const auto grip = collect_dataset(terrain_from_theta(1.0), 60.0, 11).trajectory;
  EXPECT_GT(vy_std(ice), vy_std(grip));
}

TEST(Collect, RejectsTooShortDurations) {
  EXPECT_THROW(collect_dataset(terrain_from_theta(0.5), 0.0, 1), InvalidInput);
  EXPECT_THROW(collect_dataset(terrain_from_theta(0.5), 0.1, 1), InvalidInput);
}

TEST(World, CollisionIsStrictAtTangency) {
  World w;
  w.robot_radius = 0.5;
  w.obstacles = {{{2.0, 0.0}, 1.0}};
  EXPECT_FALSE(check_collision({0.5, 0, 0, 0, 0, 0}, w));  // distance 1.5 == 1.0 + 0.5
  EXPECT_TRUE(check_collision({0.51, 0, 0, 0, 0, 0}, w));
  EXPECT_FALSE(check_collision({-5, 0, 0, 0, 0, 0}, w));
}

TEST(World, WaypointProgressAdvancesInOrderAndSaturates) {
  World w;
  w.waypoints = {{{1, 0}, 0.5}, {{2, 0}, 0.5}};
  EXPECT_EQ(waypoint_progress({2, 0, 0, 0, 0, 0}, w, 0), 0u);  // second one does not count first
  EXPECT_EQ(waypoint_progress({1, 0.2, 0, 0, 0, 0}, w, 0), 1u);
  EXPECT_EQ(waypoint_progress({2, 0, 0, 0, 0, 0}, w, 1), 2u);
  EXPECT_EQ(waypoint_progress({0, 0, 0, 0, 0, 0}, w, 2), 2u);
  EXPECT_EQ(waypoint_progress({0, 0, 0, 0, 0, 0}, w, 7), 2u);
}

TEST(World, KeyValueRoundTrip) {
  World w;
  w.robot_radius = 0.4;
  w.bounds = {-5, -6, 7, 8};
  w.start = {1, 2, 0.5, 0, 0, 0};
  w.obstacles = {{{1, 1}, 0.3}, {{2, -1}, 0.7}};
  w.waypoints = {{{3, 3}, 1.0}};
  const World b = World::from_kv(w.to_kv());
  EXPECT_EQ(b.robot_radius, w.robot_radius);
  EXPECT_EQ(b.obstacles.size(), 2u);
  EXPECT_EQ(b.obstacles[1].radius, 0.7);
  EXPECT_EQ(b.waypoints[0].center.x, 3.0);
  EXPECT_EQ(b.start.psi, 0.5);
  EXPECT_EQ(b.bounds.ymax, 8.0);
}

TEST(World, ValidationRejectsBadGeometry) {
  World w;
  w.obstacles = {{{0, 0}, -1.0}};
  EXPECT_THROW(w.validate(), InvalidInput);
  World v;
  v.waypoints = {{{1000, 0}, 1.0}};
  EXPECT_THROW(v.validate(), InvalidInput);
}

TEST(Truth, NonFiniteInputYieldsANonFiniteStateInsteadOfThrowing) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  State x;
  EXPECT_NO_THROW(x = step_truth(State{0, 0, 0, nan, 0, 0}, {1, 0}, terrain_from_theta(0.5), 0.1));
  EXPECT_FALSE(x.finite());
}
