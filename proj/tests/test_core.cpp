#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "tafe/core.hpp"
#include "tafe/io.hpp"

using namespace tafe;

namespace {
constexpr double kPi = std::numbers::pi;

State random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  return {u(rng) * 5, u(rng) * 5, wrap_angle(u(rng)), u(rng), u(rng), u(rng)};
}
}  // namespace

TEST(WrapAngle, KnownValues) {
  EXPECT_DOUBLE_EQ(wrap_angle(0.0), 0.0);
  EXPECT_NEAR(wrap_angle(3 * kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(kPi), kPi, 1e-12);
  EXPECT_NEAR(wrap_angle(-3 * kPi / 2), kPi / 2, 1e-12);
  EXPECT_THROW(wrap_angle(std::nan("")), InvalidInput);
}

TEST(WrapAngle, RangeProperty) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng);
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::cos(w), std::cos(a), 1e-9);
    EXPECT_NEAR(std::sin(w), std::sin(a), 1e-9);
  }
}

TEST(BodyFrameDelta, ForwardMotionAtHeadingZero) {
  const State a{0, 0, 0, 1, 0, 0};
  const State b{0.1, 0, 0, 1, 0, 0};
  const auto t = body_frame_delta(a, b, 0.1);
  EXPECT_NEAR(t.dx[0], 0.1, 1e-15);
  EXPECT_NEAR(t.dx[1], 0.0, 1e-15);
}

TEST(BodyFrameDelta, InertialYBecomesBodyXAtQuarterTurn) {
  const State a{1, 2, kPi / 2, 0, 0, 0};
  const State b{1, 2.5, kPi / 2, 0, 0, 0};
  const auto t = body_frame_delta(a, b, 0.1);
  EXPECT_NEAR(t.dx[0], 0.5, 1e-12);
  EXPECT_NEAR(t.dx[1], 0.0, 1e-12);
}

TEST(BodyFrameDelta, HeadingDifferenceWrapsAcrossPi) {
  const State a{0, 0, kPi - 0.05, 0, 0, 0};
  const State b{0, 0, -kPi + 0.05, 0, 0, 0};
  EXPECT_NEAR(body_frame_delta(a, b, 0.1).dx[2], 0.1, 1e-12);
}

TEST(BodyFrameDelta, PoseIsZeroedInTheStoredState) {
  const State a{3, -4, 1.0, 0.5, 0.2, -0.3};
  const auto t = body_frame_delta(a, a, 0.1);
  EXPECT_EQ(t.x.px, 0.0);
  EXPECT_EQ(t.x.py, 0.0);
  EXPECT_EQ(t.x.psi, 0.0);
  EXPECT_EQ(t.x.vx, 0.5);
  EXPECT_TRUE(t.dx.isZero());
}

TEST(BodyFrameDelta, RejectsNonPositiveDt) {
  EXPECT_THROW(body_frame_delta(State{}, State{}, 0.0), InvalidInput);
  EXPECT_THROW(compose_body_delta(State{}, Vec6::Zero(), -1.0), InvalidInput);
}

TEST(BodyFrameDelta, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const State a = random_state(rng), b = random_state(rng);
    const State c = compose_body_delta(a, body_frame_delta(a, b, 0.1).dx, 0.1);
    EXPECT_NEAR(c.px, b.px, 1e-12);
    EXPECT_NEAR(c.py, b.py, 1e-12);
    EXPECT_NEAR(wrap_angle(c.psi - b.psi), 0.0, 1e-12);
    EXPECT_NEAR(c.vx, b.vx, 1e-12);
    EXPECT_NEAR(c.vy, b.vy, 1e-12);
    EXPECT_NEAR(c.wz, b.wz, 1e-12);
  }
}

TEST(BodyFrameDelta, InvariantUnderRigidMotionOfThePlane) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    const State a = random_state(rng), b = random_state(rng);
    const double rot = u(rng), tx = u(rng), ty = u(rng);
    auto move = [&](State s) {
      const double c = std::cos(rot), sn = std::sin(rot);
      return State{c * s.px - sn * s.py + tx, sn * s.px + c * s.py + ty, wrap_angle(s.psi + rot),
                   s.vx, s.vy, s.wz};
    };
    const Vec6 d1 = body_frame_delta(a, b, 0.1).dx;
    const Vec6 d2 = body_frame_delta(move(a), move(b), 0.1).dx;
    EXPECT_LT((d1 - d2).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(BuildDataset, ReconstructsTheTrajectory) {
  std::mt19937_64 rng(9);
  Trajectory traj;
  State x{};
  for (int i = 0; i < 50; ++i) {
    traj.times.push_back(0.1 * i);
    traj.states.push_back(x);
    if (i < 49) traj.controls.push_back({0.1 * i, -0.05 * i});
    State n = random_state(rng);
    n.px = x.px + 0.1 * n.px;
    n.py = x.py + 0.1 * n.py;
    x = n;
  }
  const Dataset ds = build_dataset(traj, "s", 0.3);
  ASSERT_EQ(ds.size(), 49u);
  EXPECT_EQ(ds.terrain_id, "s");
  State r = traj.states.front();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.transitions[i].u, traj.controls[i]);
    r = compose_body_delta(r, ds.transitions[i].dx, ds.transitions[i].dt);
    const State& want = traj.states[i + 1];
    EXPECT_NEAR(r.px, want.px, 1e-10);
    EXPECT_NEAR(r.py, want.py, 1e-10);
    EXPECT_NEAR(wrap_angle(r.psi - want.psi), 0.0, 1e-10);
  }
}

TEST(BuildDataset, RejectsInconsistentTrajectories) {
  Trajectory t;
  t.times = {0.0};
  t.states = {State{}};
  EXPECT_THROW(build_dataset(t, "x", 0), InvalidInput);
  t.times = {0.0, 0.1};
  t.states = {State{}, State{}};
  EXPECT_THROW(build_dataset(t, "x", 0), InvalidInput);  // missing control
  t.controls = {Control{}};
  t.times = {0.0, 0.0};
  EXPECT_THROW(build_dataset(t, "x", 0), InvalidInput);
}

TEST(TrajectoryCsv, RoundTripIsExact) {
  std::mt19937_64 rng(10);
  Trajectory traj;
  for (int i = 0; i < 20; ++i) {
    traj.times.push_back(0.1 * i);
    traj.states.push_back(random_state(rng));
    if (i < 19) traj.controls.push_back({0.3 * std::sin(i), 0.1 * i});
  }
  std::stringstream ss;
  write_trajectory_csv(ss, traj);
  const Trajectory back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    EXPECT_EQ(back.states[i], traj.states[i]);
    EXPECT_EQ(back.times[i], traj.times[i]);
  }
  for (std::size_t i = 0; i < traj.controls.size(); ++i) EXPECT_EQ(back.controls[i], traj.controls[i]);
}

TEST(KeyValueFile, ParsesCommentsAndRepeats) {
  std::istringstream in("# header\na = 1\nb=two # trailing\nlist = 1 2\nlist = 3 4\n\n");
  const auto kv = KeyValueFile::parse(in);
  EXPECT_EQ(kv.get("a"), "1");
  EXPECT_EQ(kv.get("b"), "two");
  EXPECT_EQ(kv.get_all("list").size(), 2u);
  EXPECT_FALSE(kv.has("c"));
  std::istringstream bad("no equals sign\n");
  EXPECT_THROW(KeyValueFile::parse(bad), IoError);
}
