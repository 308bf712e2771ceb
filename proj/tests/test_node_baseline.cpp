#include <filesystem>

#include <unistd.h>

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "tafe/node_baseline.hpp"
#include "tafe/simworld.hpp"

using namespace tafe;

namespace {

const std::vector<int> kSmall{kFeatureDim, 16, kStateDim};

NodeModel<double> constant_node(const Vec6& rate) {
  NodeModel<double> m{Mlp<double>::zeros({kFeatureDim, kStateDim}), 4};
  m.net.bias(0) = rate;
  return m;
}

Eigen::Matrix3d test_matrix() {
  Eigen::Matrix3d A;
  A << -1.5, 0.4, 0.0, -0.3, -2.0, 0.5, 0.1, -0.2, -1.0;
  return A;
}

/// Exact increments of dv/dt = A v + B u on the velocity block, zero elsewhere.
Vec6 linear_truth(const Transition& t) {
  const Eigen::Matrix3d A = test_matrix();
  Eigen::Matrix<double, 3, 2> B;
  B << 1.0, 0.0, 0.0, 0.3, 0.0, 1.2;
  const Eigen::Vector3d v0(t.x.vx, t.x.vy, t.x.wz);
  const Eigen::Vector2d u(t.u.v_cmd, t.u.w_cmd);
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  M.topLeftCorner<3, 3>() = A;
  M.topRightCorner<3, 1>() = A * v0 + B * u;
  Vec6 out = Vec6::Zero();
  out.segment<3>(3) = (M * t.dt).exp().topRightCorner<3, 1>();
  return out;
}

}  // namespace

TEST(Node, ZeroNetworkPredictsNoChange) {
  const NodeModel<double> m{Mlp<double>::zeros({kFeatureDim, 8, kStateDim}), 4};
  EXPECT_TRUE(predict_increment(m, State{0, 0, 0, 1, -1, 0.5}, {1, 1}, 0.1).isZero());
}

TEST(Node, ConstantFieldIntegratesExactly) {
  Vec6 rate;
  rate << 0.5, 0.0, -1.0, 2.0, 1.0, 0.25;
  EXPECT_LT((predict_increment(constant_node(rate), State{}, {}, 0.2) - 0.2 * rate).norm(), 1e-15);
}

TEST(Node, LinearFieldMatchesTheMatrixExponential) {
  NodeModel<double> m{Mlp<double>::zeros({kFeatureDim, kStateDim}), 4};
  const Eigen::Matrix3d A = test_matrix();
  m.net.weight(0).block(3, 0, 3, 3) = A;
  const Transition t{State{0, 0, 0, 0.9, 0.1, -0.4}, {}, 0.1, Vec6::Zero()};
  Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
  M.topLeftCorner<3, 3>() = A;
  M.topRightCorner<3, 1>() = A * Eigen::Vector3d(0.9, 0.1, -0.4);
  const Eigen::Vector3d exact = (M * 0.1).exp().topRightCorner<3, 1>();
  EXPECT_LT((predict_increment(m, t.x, t.u, t.dt).segment<3>(3) - exact).norm(), 1e-8);
}

TEST(Node, LossGradientMatchesCentralDifferences) {
  NodeModel<double> m = make_node(kSmall, 1);
  const auto s = collect_dataset(terrain_from_theta(0.5), 3.0, 2).dataset.transitions;
  Vec<double> g;
  (void)node_loss(m, s, unit_weights(), &g);
  const double h = 1e-5;
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < m.net.num_params(); ++i) {
    const double keep = m.net.params()[i];
    m.net.params()[i] = keep + h;
    const double up = node_loss(m, s, unit_weights());
    m.net.params()[i] = keep - h;
    const double down = node_loss(m, s, unit_weights());
    m.net.params()[i] = keep;
    const double fd = (up - down) / (2 * h);
    num += (g[i] - fd) * (g[i] - fd);
    den += fd * fd;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-4);
}

TEST(Node, TrainingWithoutDataIsRejected) {
  EXPECT_THROW(train_node(make_node(kSmall, 3), std::span<const Dataset>{}, {}), InvalidInput);
  const std::vector<Dataset> empty{{"e", 0.5, {}}};
  EXPECT_THROW(train_node(make_node(kSmall, 3), empty, {}), InvalidInput);
  EXPECT_THROW(node_loss(make_node(kSmall, 3), {}, unit_weights()), InvalidInput);
}

TEST(Node, FitsASingleLinearSystem) {
  std::vector<Dataset> sets;
  for (std::uint64_t seed : {4, 5}) {
    auto d = collect_dataset(terrain_from_theta(1.0), 30.0, seed).dataset;
    for (auto& t : d.transitions) t.dx = linear_truth(t);
    sets.push_back(d);
  }
  TrainConfig cfg;
  cfg.epochs = 600;
  cfg.adam.learning_rate = 3e-3;
  const auto r = train_node(make_node(kSmall, 6), sets, cfg);
  auto held = collect_dataset(terrain_from_theta(1.0), 10.0, 7).dataset.transitions;
  for (auto& t : held) t.dx = linear_truth(t);
  EXPECT_LT(node_loss(r.model, held, unit_weights()), 1e-4);
  EXPECT_LT(r.history.back().train_mse, r.history.front().train_mse);
}

TEST(Node, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / ("tafe_node_ckpt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const NodeModel<double> m = make_node(kSmall, 8, 3);
  save_node_checkpoint(dir / "n.json", m);
  const NodeModel<double> back = load_node_checkpoint(dir / "n.json");
  EXPECT_EQ(back.substeps, 3);
  EXPECT_EQ(back.net.params(), m.net.params());
  auto j = node_to_json(m);
  j["format"] = "tafe.basis_set";
  EXPECT_THROW(node_from_json(j), LoadError);
  std::filesystem::remove_all(dir);
}
