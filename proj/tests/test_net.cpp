#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "tafe/net.hpp"

using namespace tafe;

namespace {
Mat<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  return m;
}
}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroOutput) {
  const auto net = Mlp<double>::zeros({7, 16, 16, 6});
  EXPECT_TRUE(net.forward(random_matrix(7, 13, 1)).isZero());
}

TEST(Mlp, MatchesAHandComputedTwoLayerNetwork) {
  auto net = Mlp<double>::zeros({2, 2, 1});
  net.weight(0) << 0.5, -1.0, 2.0, 0.25;
  net.bias(0) << 0.1, -0.2;
  net.weight(1) << 1.5, -0.75;
  net.bias(1) << 0.3;
  const double x0 = 0.4, x1 = -1.2;
  const double h0 = std::tanh(0.5 * x0 - 1.0 * x1 + 0.1);
  const double h1 = std::tanh(2.0 * x0 + 0.25 * x1 - 0.2);
  const double want = 1.5 * h0 - 0.75 * h1 + 0.3;
  Vec<double> in(2);
  in << x0, x1;
  EXPECT_NEAR(net.forward_one(in)[0], want, 1e-15);
}

TEST(Mlp, ColumnResultDoesNotDependOnTheBatch) {
  const Mlp<double> net({7, 32, 32, 6}, 3);
  const Mat<double> x = random_matrix(7, 37, 4);
  const Mat<double> batched = net.forward(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Vec<double> one = net.forward_one(x.col(c));
    EXPECT_EQ(batched.col(c), one) << "column " << c;
  }
}

TEST(Mlp, ParameterGradientMatchesCentralDifferences) {
  Mlp<double> net({7, 12, 12, 6}, 5);
  const Mat<double> x = random_matrix(7, 9, 6), w = random_matrix(6, 9, 7);
  auto loss = [&] { return (net.forward(x).array() * w.array()).sum(); };
  MlpTape<double> tape;
  (void)net.forward(x, &tape);
  Vec<double> g;
  net.backward(tape, w, g);
  const double h = 1e-5;
  double num = 0, den = 0;
  for (Eigen::Index i = 0; i < net.num_params(); ++i) {
    const double keep = net.params()[i];
    net.params()[i] = keep + h;
    const double up = loss();
    net.params()[i] = keep - h;
    const double down = loss();
    net.params()[i] = keep;
    const double fd = (up - down) / (2 * h);
    num += (g[i] - fd) * (g[i] - fd);
    den += fd * fd;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-4);
}

TEST(Mlp, InputGradientMatchesCentralDifferences) {
  const Mlp<double> net({7, 10, 6}, 8);
  Mat<double> x = random_matrix(7, 5, 9);
  const Mat<double> w = random_matrix(6, 5, 10);
  MlpTape<double> tape;
  (void)net.forward(x, &tape);
  Vec<double> g;
  const Mat<double> dx = net.backward(tape, w, g);
  ASSERT_EQ(dx.rows(), 7);
  ASSERT_EQ(dx.cols(), 5);
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = (net.forward(x).array() * w.array()).sum();
    x.data()[i] = keep - h;
    const double down = (net.forward(x).array() * w.array()).sum();
    x.data()[i] = keep;
    EXPECT_NEAR(dx.data()[i], (up - down) / (2 * h), 1e-7);
  }
}

TEST(Mlp, RejectsWrongInputShape) {
  const Mlp<double> net({7, 4, 6}, 1);
  EXPECT_THROW((void)net.forward(Mat<double>::Zero(6, 3)), InvalidInput);
  EXPECT_THROW(Mlp<double>::zeros({7}), InvalidInput);
  EXPECT_THROW(Mlp<double>::zeros({7, 0, 6}), InvalidInput);
}

TEST(Mlp, InitializationIsSeededAndBounded) {
  const Mlp<double> a({7, 32, 6}, 11), b({7, 32, 6}, 11), c({7, 32, 6}, 12);
  EXPECT_EQ(a.params(), b.params());
  EXPECT_NE(a.params(), c.params());
  EXPECT_LE(a.weight(0).cwiseAbs().maxCoeff(), 1.0 / std::sqrt(7.0));
  EXPECT_LE(a.weight(1).cwiseAbs().maxCoeff(), 1.0 / std::sqrt(32.0));
}

TEST(Mlp, FloatCastAgreesToSinglePrecision) {
  const Mlp<double> net({7, 32, 32, 6}, 13);
  const Mat<double> x = random_matrix(7, 20, 14);
  const Mat<double> d = net.forward(x);
  const Mat<double> f = net.cast<float>().forward(x.cast<float>()).cast<double>();
  EXPECT_LT((d - f).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Mlp, JsonRoundTripIsExact) {
  const Mlp<double> net({7, 9, 6}, 15);
  const auto back = mlp_from_json<double>(nlohmann::json::parse(mlp_to_json(net).dump()));
  EXPECT_EQ(back.layer_sizes(), net.layer_sizes());
  EXPECT_EQ(back.params(), net.params());
}

TEST(Mlp, JsonRejectsBadVersionAndShapes) {
  const Mlp<double> net({7, 9, 6}, 16);
  auto j = mlp_to_json(net);
  j["format_version"] = 99;
  EXPECT_THROW(mlp_from_json<double>(j), InvalidInput);
  j = mlp_to_json(net);
  j["layers"][0]["biases"].erase(0);
  EXPECT_THROW(mlp_from_json<double>(j), InvalidInput);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Vec<double> p(3);
  p << 1, -2, 3;
  const Vec<double> before = p;
  OptimizerState opt(3, {});
  for (int i = 0; i < 10; ++i) adam_step(p, Vec<double>::Zero(3), opt);
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.step, 10);
}

TEST(Adam, FirstStepMovesEachCoordinateByTheLearningRateAgainstTheGradient) {
  Vec<double> p = Vec<double>::Zero(3);
  Vec<double> g(3);
  g << 4.0, -0.5, 1e-3;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  OptimizerState opt(3, cfg);
  adam_step(p, g, opt);
  for (Eigen::Index i = 0; i < 3; ++i)
    EXPECT_NEAR(p[i], -cfg.learning_rate * g[i] / (std::abs(g[i]) + cfg.epsilon), 1e-12);
}

TEST(Adam, MinimizesAScalarQuadratic) {
  Vec<double> p(1);
  p << 5.0;
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  OptimizerState opt(1, cfg);
  int steps = 0;
  while (std::abs(p[0] - 2.0) >= 1e-3 && steps < 2000) {
    Vec<double> g(1);
    g << 2.0 * (p[0] - 2.0);
    adam_step(p, g, opt);
    ++steps;
  }
  EXPECT_LT(std::abs(p[0] - 2.0), 1e-3);
  EXPECT_LE(steps, 2000);
}

TEST(Adam, ShapeMismatchThrows) {
  Vec<double> p = Vec<double>::Zero(2);
  OptimizerState opt(3, {});
  EXPECT_THROW(adam_step(p, Vec<double>::Zero(2), opt), InvalidInput);
}
