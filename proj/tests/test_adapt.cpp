#include <random>

#include <gtest/gtest.h>

#include "tafe/adapt.hpp"

using namespace tafe;

namespace {

const std::vector<int> kSmall{kFeatureDim, 8, kStateDim};

std::vector<Transition> stream(double theta, double seconds, std::uint64_t seed) {
  return collect_dataset(terrain_from_theta(theta), seconds, seed).dataset.transitions;
}

/// Replace targets with a fixed combination of the basis plus small noise.
void plant(std::vector<Transition>& ts, const BasisSet<double>& b, const Eigen::VectorXd& alpha,
           double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (auto& t : ts) {
    t.dx = predict_increment(b, Coefficients{alpha, 0, {}}, t.x, t.u, t.dt);
    for (int d = 0; d < kStateDim; ++d) t.dx[d] += noise * n01(rng);
  }
}

double mse_with(const BasisSet<double>& b, const Eigen::VectorXd& alpha,
                const std::vector<Transition>& ts) {
  const std::span<const Transition> s(ts);
  return increment_mse(predict_increments(b, alpha, make_batch<double>(s)), targets_of(s));
}

}  // namespace

TEST(Buffer, KeepsTheMostRecentTransitionsInOrder) {
  AdaptationBuffer b(3);
  const auto ts = stream(0.5, 1.0, 1);
  for (std::size_t i = 0; i < 5; ++i) b.push(ts[i]);
  ASSERT_EQ(b.size(), 3u);
  const auto c = b.contents();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(c[i].dx, ts[i + 2].dx);
}

TEST(Buffer, RejectsBadSettingsAndEmptyRefresh) {
  EXPECT_THROW(AdaptationBuffer(0), InvalidInput);
  EXPECT_THROW(AdaptationBuffer(5, 0), InvalidInput);
  AdaptationBuffer b(5);
  EXPECT_THROW(b.refresh(make_basis(2, kSmall, 1)), NoData);
  EXPECT_THROW((void)b.coefficients(), NoData);
}

TEST(Buffer, WindowFitIsCloseToTheOfflineFit) {
  const BasisSet<double> basis = make_basis(6, kSmall, 2);
  const auto all = stream(0.3, 60.0, 3);
  const std::vector<Transition> held(all.end() - 100, all.end());
  const auto offline = fit_coefficients(basis, std::span<const Transition>(all.data(), all.size() - 100));
  AdaptationBuffer b(100);
  for (std::size_t i = all.size() - 200; i < all.size() - 100; ++i) b.push(all[i]);
  EXPECT_EQ(b.refresh(basis), SolveFlag::ok);
  EXPECT_LE(mse_with(basis, b.coefficients().alpha, held), 1.5 * mse_with(basis, offline.alpha, held));
}

TEST(Buffer, WindowSizeBarelyMovesTheEstimateOnStationaryData) {
  const BasisSet<double> basis = make_basis(3, kSmall, 4);
  auto ts = stream(0.6, 30.0, 5);
  Eigen::VectorXd alpha(3);
  alpha << 1.0, -2.0, 0.5;
  plant(ts, basis, alpha, 1e-4, 6);
  AdaptationBuffer small(100), large(200);
  for (const auto& t : ts) {
    small.push(t);
    large.push(t);
  }
  small.refresh(basis);
  large.refresh(basis);
  const auto& a = small.coefficients().alpha;
  const auto& b = large.coefficients().alpha;
  EXPECT_LT((a - b).norm() / b.norm(), 0.1);
  EXPECT_LT((b - alpha).norm() / alpha.norm(), 0.1);
}

TEST(Buffer, DegenerateExcitationKeepsThePreviousSolution) {
  const BasisSet<double> basis = make_basis(8, kSmall, 7);
  AdaptationBuffer b(50);
  for (const auto& t : stream(0.5, 10.0, 8)) b.push(t);
  EXPECT_EQ(b.refresh(basis), SolveFlag::ok);
  const Eigen::VectorXd before = b.coefficients().alpha;
  // One transition repeated: the Gram matrix has rank at most 6 < k.
  const Transition same = stream(0.5, 1.0, 9).front();
  for (int i = 0; i < 50; ++i) b.push(same);
  EXPECT_EQ(b.refresh(basis), SolveFlag::fallback);
  EXPECT_EQ(b.last_flag(), SolveFlag::fallback);
  EXPECT_EQ(b.coefficients().alpha, before);
}

TEST(Buffer, FirstSolveOnDegenerateDataStillProducesCoefficients) {
  const BasisSet<double> basis = make_basis(8, kSmall, 10);
  AdaptationBuffer b(20);
  const Transition same = stream(0.5, 1.0, 11).front();
  for (int i = 0; i < 20; ++i) b.push(same);
  EXPECT_EQ(b.refresh(basis), SolveFlag::fallback);
  ASSERT_TRUE(b.has_coefficients());
  EXPECT_TRUE(b.coefficients().alpha.allFinite());
}

TEST(Buffer, RefreshFollowsTheSchedule) {
  const BasisSet<double> basis = make_basis(2, kSmall, 12);
  AdaptationBuffer b(30, 3);
  for (const auto& t : stream(0.5, 4.0, 13)) b.push(t);
  EXPECT_EQ(b.maybe_refresh(basis, 1), SolveFlag::held);
  EXPECT_EQ(b.maybe_refresh(basis, 2), SolveFlag::held);
  EXPECT_EQ(b.maybe_refresh(basis, 3), SolveFlag::ok);

  AdaptationBuffer once(30, kNeverRefresh);
  for (const auto& t : stream(0.5, 4.0, 14)) once.push(t);
  EXPECT_EQ(once.maybe_refresh(basis, 1), SolveFlag::ok);
  const Eigen::VectorXd first = once.coefficients().alpha;
  for (const auto& t : stream(0.9, 4.0, 15)) once.push(t);
  for (std::size_t s = 2; s < 10; ++s) EXPECT_EQ(once.maybe_refresh(basis, s), SolveFlag::held);
  EXPECT_EQ(once.coefficients().alpha, first);
}

TEST(Snapshot, CoefficientsStayFixedWhileTheBufferMoves) {
  const auto basis = std::make_shared<const BasisSet<double>>(make_basis(3, kSmall, 16));
  AdaptationBuffer b(40);
  for (const auto& t : stream(0.2, 5.0, 17)) b.push(t);
  b.refresh(*basis);
  const FeModel<double> model = adaptive_model(basis, b);
  const Vec6 before = predict_one(model, State{0, 0, 0, 1, 0, 0}, {1, 0.5}, 0.1);
  for (const auto& t : stream(0.9, 5.0, 18)) b.push(t);
  b.refresh(*basis);
  ASSERT_NE(b.coefficients().alpha, model.alpha);
  EXPECT_EQ(predict_one(model, State{0, 0, 0, 1, 0, 0}, {1, 0.5}, 0.1), before);
}

TEST(Bootstrap, ExcitationRespectsLimitsAndVaries) {
  const ControlLimits lim;
  double vmin = 1e9, vmax = -1e9, wmin = 1e9, wmax = -1e9;
  for (int i = 0; i < 20; ++i) {
    const Control u = bootstrap_control(0.1 * i, lim);
    EXPECT_LE(std::abs(u.v_cmd), lim.v_max);
    EXPECT_LE(std::abs(u.w_cmd), lim.w_max);
    vmin = std::min(vmin, u.v_cmd);
    vmax = std::max(vmax, u.v_cmd);
    wmin = std::min(wmin, u.w_cmd);
    wmax = std::max(wmax, u.w_cmd);
  }
  EXPECT_GT(vmax - vmin, 0.5);
  EXPECT_LT(wmin, 0.0);
  EXPECT_GT(wmax, 0.0);
}

TEST(Bootstrap, FillsABufferThatSolvesCleanly) {
  const BasisSet<double> basis = make_basis(8, kSmall, 19);
  const auto terrain = terrain_from_theta(0.0);
  AdaptationBuffer b(100);
  State x{};
  for (int i = 0; i < static_cast<int>(kBootstrapSeconds * 10); ++i) {
    const Control u = bootstrap_control(0.1 * i);
    const State n = step_truth(x, u, terrain, 0.1);
    b.push(body_frame_delta(x, n, 0.1, u));
    x = n;
  }
  EXPECT_EQ(b.refresh(basis), SolveFlag::ok);
}
