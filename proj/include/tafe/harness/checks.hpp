#pragma once

// Numerical self-checks reported alongside the experiment results: planted
// coefficient recovery, gradient checks against central differences, and the
// convergence order of the integrators.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "tafe/adapt.hpp"
#include "tafe/fenode.hpp"
#include "tafe/harness/mission.hpp"
#include "tafe/harness/stats.hpp"
#include "tafe/node_baseline.hpp"
#include "tafe/rk4.hpp"
#include "tafe/simworld.hpp"

namespace tafe::harness {

struct RecoveryCheck {
  double relative_error = 0.0;
  double rcond = 0.0;
  double seconds = 0.0;  // timing, reported separately
};

/// Targets built as an exact combination of a frozen basis; the unregularized
/// solve must return that combination.
inline RecoveryCheck planted_recovery(int k, const std::vector<int>& layers, std::uint64_t seed) {
  const BasisSet<double> basis = make_basis(k, layers, seed);
  auto data = collect_dataset(terrain_from_theta(0.5), 30.0, derive_seed(seed, 1)).dataset;
  std::mt19937_64 rng(derive_seed(seed, 2));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd planted(k);
  for (int j = 0; j < k; ++j) planted[j] = u(rng);
  const auto batch = make_batch<double>(data.transitions);
  const auto incs = basis_increments(basis, batch);
  Mat<double> targets = Mat<double>::Zero(kStateDim, batch.size());
  for (int j = 0; j < k; ++j) targets += planted[j] * incs[static_cast<std::size_t>(j)];
  for (std::size_t i = 0; i < data.size(); ++i)
    data.transitions[i].dx = targets.col(static_cast<Eigen::Index>(i));

  RecoveryCheck out;
  Stopwatch clock;
  const GramSystem sys = gram_system(basis, std::span<const Transition>(data.transitions),
                                     Regularization::none());
  const Coefficients c = solve_coefficients(sys);
  out.seconds = clock.seconds();
  out.rcond = reciprocal_condition(sys.gram);
  out.relative_error = (c.alpha - planted).norm() / planted.norm();
  return out;
}

namespace detail {

/// ||analytic - numeric|| / ||numeric|| over the given coordinates.
template <class Loss>
double fd_relative_error(Vec<double>& params, const Vec<double>& analytic,
                         const std::vector<Eigen::Index>& coords, double h, Loss&& loss) {
  double num = 0.0, den = 0.0;
  for (auto i : coords) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    num += (analytic[i] - fd) * (analytic[i] - fd);
    den += fd * fd;
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

inline std::vector<Eigen::Index> pick_coords(Eigen::Index n, std::size_t count, std::uint64_t seed) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  if (static_cast<std::size_t>(n) <= count) return all;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

inline std::vector<Transition> sample_transitions(std::size_t n, std::uint64_t seed) {
  auto d = collect_dataset(terrain_from_theta(0.6), static_cast<double>(n + 1) / 10.0, seed).dataset;
  d.transitions.resize(std::min(n, d.transitions.size()));
  return d.transitions;
}

}  // namespace detail

struct GradientChecks {
  double mlp = 0.0;         // network parameters, plain forward
  double node_loss = 0.0;   // through the integrator
  double fe_loss = 0.0;     // through integrator, Gram system and solve (k = 2 toy)
};

inline GradientChecks gradient_checks(const std::vector<int>& layers, std::uint64_t seed) {
  GradientChecks out;
  {
    Mlp<double> net(layers, derive_seed(seed, 3));
    std::mt19937_64 rng(derive_seed(seed, 4));
    std::normal_distribution<double> n01;
    Mat<double> x(net.input_dim(), 16), w(net.output_dim(), 16);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n01(rng);
    auto loss = [&] { return (net.forward(x).array() * w.array()).sum(); };
    MlpTape<double> tape;
    (void)net.forward(x, &tape);
    Vec<double> g = Vec<double>::Zero(net.num_params());
    net.backward(tape, w, g);
    const auto coords = detail::pick_coords(net.num_params(), 400, derive_seed(seed, 5));
    out.mlp = detail::fd_relative_error(net.params(), g, coords, 1e-6, loss);
  }
  {
    NodeModel<double> m = make_node(layers, derive_seed(seed, 6));
    const auto samples = detail::sample_transitions(24, derive_seed(seed, 7));
    Vec<double> g;
    node_loss(m, samples, unit_weights(), &g);
    auto loss = [&] { return node_loss(m, samples, unit_weights()); };
    const auto coords = detail::pick_coords(m.net.num_params(), 60, derive_seed(seed, 8));
    out.node_loss = detail::fd_relative_error(m.net.params(), g, coords, 1e-6, loss);
  }
  {
    BasisSet<double> b = make_basis(2, {kFeatureDim, 8, kStateDim}, derive_seed(seed, 9));
    const auto samples = detail::sample_transitions(40, derive_seed(seed, 10));
    Episode e{{samples.begin(), samples.begin() + 20}, {samples.begin() + 20, samples.end()}};
    const std::span<const Episode> eps(&e, 1);
    FeLossOptions opt;
    opt.reg.relative = 1e-3;
    std::vector<Vec<double>> grads;
    fe_episode_loss(b, eps, opt, &grads);
    Vec<double> flat = concat_params(b);
    Vec<double> g(flat.size());
    Eigen::Index off = 0;
    for (const auto& gj : grads) {
      g.segment(off, gj.size()) = gj;
      off += gj.size();
    }
    auto loss = [&] {
      scatter_params(b, flat);
      return fe_episode_loss(b, eps, opt);
    };
    const auto coords = detail::pick_coords(flat.size(), 80, derive_seed(seed, 11));
    out.fe_loss = detail::fd_relative_error(flat, g, coords, 1e-6, loss);
    scatter_params(b, flat);
  }
  return out;
}

struct OrderCheck {
  double rk4_ratio = 0.0;    // generic stepper on a damped rotation
  double field_ratio = 0.0;  // the network integrator on a linear field
};

/// Global error at n and 2n steps; classical RK4 should give a ratio near 16.
inline OrderCheck rk4_order() {
  OrderCheck out;
  {
    const double a = 0.3, w = 2.0, T = 2.0;
    Eigen::Vector2d y0(1.0, 0.5);
    auto f = [&](const Eigen::Vector2d& y) {
      return Eigen::Vector2d(-a * y[0] - w * y[1], w * y[0] - a * y[1]);
    };
    const double c = std::cos(w * T), s = std::sin(w * T), d = std::exp(-a * T);
    const Eigen::Vector2d exact = d * Eigen::Vector2d(c * y0[0] - s * y0[1], s * y0[0] + c * y0[1]);
    const double e1 = (rk4_integrate(y0, T, 10, f) - exact).norm();
    const double e2 = (rk4_integrate(y0, T, 20, f) - exact).norm();
    out.rk4_ratio = e1 / e2;
  }
  {
    // Linear network acting on (vx, vy, wz) only: dz/dt = A (v0 + z) + b.
    Mlp<double> net = Mlp<double>::zeros({kFeatureDim, kStateDim});
    Eigen::Matrix3d A;
    A << -0.8, 0.6, 0.1, -0.5, -1.1, 0.4, 0.3, -0.2, -0.9;
    const Eigen::Vector3d b(0.2, -0.1, 0.3);
    net.weight(0).block(3, 0, 3, 3) = A;
    net.bias(0).segment(3, 3) = b;
    const Transition t{State{0, 0, 0, 0.7, -0.2, 0.4}, {}, 1.5, Vec6::Zero()};
    const auto batch = make_batch<double>(std::span<const Transition>(&t, 1));
    // Augmented exponential gives the exact increment of the velocity block.
    Eigen::Matrix4d M = Eigen::Matrix4d::Zero();
    M.topLeftCorner<3, 3>() = A;
    M.topRightCorner<3, 1>() = A * Eigen::Vector3d(0.7, -0.2, 0.4) + b;
    const Eigen::Matrix4d E = (M * t.dt).exp();
    const Eigen::Vector3d exact = E.topRightCorner<3, 1>();
    auto err = [&](int n) {
      const Mat<double> z = integrate_field(net, batch, n);
      return (z.col(0).segment<3>(3) - exact).norm();
    };
    out.field_ratio = err(6) / err(12);
  }
  return out;
}

struct BudgetCheck {
  double refresh_s = 0.0;    // one window solve, n = capacity
  double mppi_step_s = 0.0;  // one controller iteration at the budget size
  double period_s = 0.0;
};

/// Median wall time of the online pieces. Timings are never part of the
/// report; only the verdicts are.
inline BudgetCheck online_budget(const ExperimentConfig& cfg, const BasisSet<double>& basis,
                                 int repeats = 5) {
  BudgetCheck out;
  out.period_s = cfg.truth.dt();
  const auto data = collect_dataset(terrain_from_theta(cfg.extrap_scene, cfg.truth), 30.0,
                                    derive_seed(cfg.base_seed, streams::mission), cfg.truth)
                        .dataset;
  AdaptationBuffer buffer(cfg.adapt_capacity, 1);
  for (const auto& t : data.transitions) buffer.push(t);
  std::vector<double> times;
  for (int i = 0; i < repeats; ++i) {
    Stopwatch clock;
    buffer.refresh(basis);
    times.push_back(clock.seconds());
  }
  out.refresh_s = median(times);

  auto fast = basis.cast<float>();
  fast.substeps = cfg.mission_substeps;
  const auto model_basis = std::make_shared<const BasisSet<float>>(std::move(fast));
  const FeModel<float> model = adaptive_model(model_basis, buffer);
  const World world = mission_world(cfg);
  MppiController ctl(cfg.budget_mppi, cfg.cost);
  times.clear();
  for (int i = 0; i < std::max(1, repeats / 2); ++i) {
    Stopwatch clock;
    (void)ctl.step(model, world.start, world, 0);
    times.push_back(clock.seconds());
  }
  out.mppi_step_s = median(times);
  return out;
}

}  // namespace tafe::harness
