#pragma once

// Function encoder over neural-ODE basis functions.
//
// Each basis field g_j is integrated over one control interval to give the
// basis increment G_j(x, u). A terrain is represented by coefficients alpha
// with  dx ~= sum_j alpha_j G_j(x, u),  where alpha solves the regularized
// normal equations built from Monte-Carlo inner products over observed
// transitions. Training differentiates through that solve.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "tafe/core.hpp"
#include "tafe/io.hpp"
#include "tafe/net.hpp"
#include "tafe/odenet.hpp"

namespace tafe {

struct SingularSystem : NumericError {
  double condition;
  SingularSystem(const std::string& what, double cond) : NumericError(what), condition(cond) {}
};

struct TrainingFailure : std::runtime_error {
  int epoch;
  TrainingFailure(const std::string& what, int ep)
      : std::runtime_error(what + " (epoch " + std::to_string(ep) + ")"), epoch(ep) {}
};

struct LoadError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kBasisFormatVersion = 1;
inline constexpr int kDefaultSubsteps = 4;

template <class S>
struct BasisSet {
  std::vector<Mlp<S>> nets;
  int substeps = kDefaultSubsteps;
  int format_version = kBasisFormatVersion;

  [[nodiscard]] int k() const { return static_cast<int>(nets.size()); }

  template <class T>
  [[nodiscard]] BasisSet<T> cast() const {
    BasisSet<T> out;
    out.substeps = substeps;
    out.format_version = format_version;
    for (const auto& n : nets) out.nets.push_back(n.template cast<T>());
    return out;
  }
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline BasisSet<double> make_basis(int k, const std::vector<int>& layers, std::uint64_t seed,
                                   int substeps = kDefaultSubsteps) {
  if (k < 1) throw InvalidInput("make_basis: k must be at least 1");
  BasisSet<double> b;
  b.substeps = substeps;
  for (int j = 0; j < k; ++j)
    b.nets.emplace_back(layers, derive_seed(seed, static_cast<std::uint64_t>(j)));
  return b;
}

/// Basis increments for a batch: one 6 x B matrix per basis function.
template <class S>
std::vector<Mat<S>> basis_increments(const BasisSet<S>& basis, const SampleBatch<S>& batch,
                                     std::vector<OdeTape<S>>* tapes = nullptr) {
  std::vector<Mat<S>> out;
  out.reserve(basis.nets.size());
  if (tapes) tapes->resize(basis.nets.size());
  for (std::size_t j = 0; j < basis.nets.size(); ++j) {
    out.push_back(integrate_field(basis.nets[j], batch, basis.substeps,
                                  tapes ? &(*tapes)[j] : nullptr));
    if (!out.back().allFinite()) throw NumericError("basis increment is not finite");
  }
  return out;
}

template <class S>
Vec6 basis_increment(const BasisSet<S>& basis, int j, const State& x, const Control& u, double dt) {
  if (j < 0 || j >= basis.k()) throw InvalidInput("basis_increment: index out of range");
  if (!(dt > 0)) throw InvalidInput("basis_increment: dt must be positive");
  const Transition t{x, u, dt, Vec6::Zero()};
  const auto batch = make_batch<S>(std::span<const Transition>(&t, 1));
  const Mat<S> inc = integrate_field(basis.nets[static_cast<std::size_t>(j)], batch, basis.substeps);
  if (!inc.allFinite()) throw NumericError("basis increment is not finite");
  return inc.col(0).template cast<double>();
}

struct Coefficients {
  Eigen::VectorXd alpha;
  std::size_t source_count = 0;
  std::optional<std::string> terrain_id;

  [[nodiscard]] int k() const { return static_cast<int>(alpha.size()); }
};

/// sum_j alpha_j G_j for every column of the batch.
template <class S>
Mat<S> predict_increments(const BasisSet<S>& basis, const Eigen::VectorXd& alpha,
                          const SampleBatch<S>& batch) {
  if (alpha.size() != basis.k()) throw InvalidInput("predict: coefficient length != k");
  Mat<S> out = Mat<S>::Zero(kStateDim, batch.size());
  for (std::size_t j = 0; j < basis.nets.size(); ++j) {
    const auto a = static_cast<S>(alpha[static_cast<Eigen::Index>(j)]);
    if (a == S(0)) continue;
    out += a * integrate_field(basis.nets[j], batch, basis.substeps);
  }
  return out;
}

template <class S>
Vec6 predict_increment(const BasisSet<S>& basis, const Coefficients& c, const State& x,
                       const Control& u, double dt) {
  if (!(dt > 0)) throw InvalidInput("predict_increment: dt must be positive");
  const Transition t{x, u, dt, Vec6::Zero()};
  const auto batch = make_batch<S>(std::span<const Transition>(&t, 1));
  const Mat<S> inc = predict_increments(basis, c.alpha, batch);
  if (!inc.allFinite()) throw NumericError("predicted increment is not finite");
  return inc.col(0).template cast<double>();
}

// ---------------------------------------------------------------------------
// Normal equations

/// lambda = absolute + relative * trace(G) / k
struct Regularization {
  double relative = 1e-6;
  double absolute = 0.0;

  static Regularization none() { return {0.0, 0.0}; }
};

struct GramSystem {
  Eigen::MatrixXd gram;
  Eigen::VectorXd rhs;
  double lambda = 0.0;
  std::size_t sample_count = 0;
};

/// Per-dimension weights of the increment inner product; all ones by default.
using DimWeights = Eigen::Matrix<double, kStateDim, 1>;
inline DimWeights unit_weights() { return DimWeights::Ones(); }

namespace detail {

/// Stack the (weighted) increments of each basis into a (6m x k) design matrix.
inline Eigen::MatrixXd design_matrix(const std::vector<Mat<double>>& incs, Eigen::Index first,
                                     Eigen::Index count, const DimWeights& sqrt_w) {
  const auto k = static_cast<Eigen::Index>(incs.size());
  Eigen::MatrixXd p(kStateDim * count, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto block = incs[static_cast<std::size_t>(j)].middleCols(first, count);
    for (Eigen::Index s = 0; s < count; ++s)
      p.col(j).segment(kStateDim * s, kStateDim) = block.col(s).cwiseProduct(sqrt_w);
  }
  return p;
}

inline Eigen::VectorXd stacked_targets(const Mat<double>& targets, Eigen::Index first,
                                       Eigen::Index count, const DimWeights& sqrt_w) {
  Eigen::VectorXd t(kStateDim * count);
  for (Eigen::Index s = 0; s < count; ++s)
    t.segment(kStateDim * s, kStateDim) = targets.col(first + s).cwiseProduct(sqrt_w);
  return t;
}

}  // namespace detail

/// Monte-Carlo Gram matrix and right-hand side from precomputed increments.
inline GramSystem gram_from_increments(const std::vector<Mat<double>>& incs,
                                       const Mat<double>& targets, Regularization reg = {},
                                       const DimWeights& weights = unit_weights()) {
  if (incs.empty()) throw InvalidInput("gram_system: no basis functions");
  const Eigen::Index m = targets.cols();
  if (m < 1) throw InvalidInput("gram_system: need at least one transition");
  const DimWeights sw = weights.cwiseSqrt();
  const Eigen::MatrixXd p = detail::design_matrix(incs, 0, m, sw);
  const Eigen::VectorXd t = detail::stacked_targets(targets, 0, m, sw);
  GramSystem sys;
  sys.gram = (p.transpose() * p) / static_cast<double>(m);
  sys.rhs = (p.transpose() * t) / static_cast<double>(m);
  sys.lambda = reg.absolute + reg.relative * sys.gram.trace() / static_cast<double>(incs.size());
  sys.sample_count = static_cast<std::size_t>(m);
  return sys;
}

template <class S>
GramSystem gram_system(const BasisSet<S>& basis, std::span<const Transition> transitions,
                       Regularization reg = {}, const DimWeights& weights = unit_weights()) {
  if (transitions.empty()) throw InvalidInput("gram_system: need at least one transition");
  const auto batch = make_batch<S>(transitions);
  std::vector<Mat<double>> incs;
  for (auto& m : basis_increments(basis, batch)) incs.push_back(m.template cast<double>());
  return gram_from_increments(incs, targets_of(transitions), reg, weights);
}

struct SolveOptions {
  /// Reject systems whose unregularized Gram matrix has reciprocal condition
  /// below this value (degenerate excitation). Zero disables the check.
  double min_rcond = 0.0;
};

inline double reciprocal_condition(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double hi = ev.cwiseAbs().maxCoeff();
  if (!(hi > 0)) return 0.0;
  return std::max(ev.minCoeff(), 0.0) / hi;
}

/// alpha = (G + lambda I)^{-1} rhs via Cholesky.
inline Coefficients solve_coefficients(const GramSystem& sys, const SolveOptions& opts = {}) {
  const auto k = sys.gram.rows();
  if (k < 1 || sys.gram.cols() != k || sys.rhs.size() != k)
    throw InvalidInput("solve_coefficients: inconsistent system shape");
  if (!sys.gram.allFinite() || !sys.rhs.allFinite())
    throw NumericError("solve_coefficients: non-finite system");
  if (opts.min_rcond > 0) {
    const double rc = reciprocal_condition(sys.gram);
    if (rc < opts.min_rcond)
      throw SingularSystem("solve_coefficients: Gram matrix is rank deficient",
                           rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity());
  }
  const Eigen::MatrixXd a = sys.gram + sys.lambda * Eigen::MatrixXd::Identity(k, k);
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    const double rc = reciprocal_condition(a);
    throw SingularSystem("solve_coefficients: factorization failed",
                         rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity());
  }
  Coefficients c;
  c.alpha = llt.solve(sys.rhs);
  c.source_count = sys.sample_count;
  if (!c.alpha.allFinite()) throw SingularSystem("solve_coefficients: non-finite solution", 0.0);
  return c;
}

template <class S>
Coefficients fit_coefficients(const BasisSet<S>& basis, std::span<const Transition> transitions,
                              Regularization reg = {}, const SolveOptions& opts = {},
                              const DimWeights& weights = unit_weights()) {
  return solve_coefficients(gram_system(basis, transitions, reg, weights), opts);
}

/// Mean over samples and components of the weighted squared increment error.
inline double increment_mse(const Mat<double>& predicted, const Mat<double>& targets,
                            const DimWeights& weights = unit_weights()) {
  if (targets.cols() == 0) return 0.0;
  const Mat<double> r = targets - predicted;
  return (r.array().square().colwise() * weights.array()).sum() /
         static_cast<double>(kStateDim * targets.cols());
}

// ---------------------------------------------------------------------------
// Training

/// One dataset's contribution to a training step: fit on `support`, score on `query`.
struct Episode {
  std::vector<Transition> support;
  std::vector<Transition> query;
};

/// Draws identical minibatch streams for every model given the seed.
class MinibatchSampler {
 public:
  explicit MinibatchSampler(std::uint64_t seed) : rng_(seed) {}

  std::vector<std::size_t> draw(std::size_t population, std::size_t count) {
    count = std::min(count, population);
    scratch_.resize(population);
    for (std::size_t i = 0; i < population; ++i) scratch_[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, population - 1);
      std::swap(scratch_[i], scratch_[pick(rng_)]);
    }
    return {scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(count)};
  }

  /// One episode per dataset: `batch` samples, the first `support` of them for fitting.
  std::vector<Episode> episodes(std::span<const Dataset> datasets, std::size_t batch,
                                std::size_t support) {
    std::vector<Episode> out;
    for (const auto& ds : datasets) {
      const auto idx = draw(ds.size(), batch);
      const std::size_t ns = std::min(support, idx.size());
      Episode e;
      for (std::size_t i = 0; i < idx.size(); ++i)
        (i < ns ? e.support : e.query).push_back(ds.transitions[idx[i]]);
      out.push_back(std::move(e));
    }
    return out;
  }

 private:
  std::mt19937_64 rng_;
  std::vector<std::size_t> scratch_;
};

inline Episode make_episode(const Dataset& ds, std::size_t support, std::size_t query,
                            std::uint64_t seed) {
  MinibatchSampler s(seed);
  const std::span<const Dataset> one(&ds, 1);
  return std::move(s.episodes(one, support + query, support).front());
}

struct FeLossOptions {
  Regularization reg{};
  DimWeights weights = unit_weights();
};

/// Sum over episodes of the query MSE after fitting coefficients on the support
/// set. When `grads` is non-null it receives dL/dparams for each basis network,
/// differentiating through the increments, the Gram system and its solve.
inline double fe_episode_loss(const BasisSet<double>& basis, std::span<const Episode> episodes,
                              const FeLossOptions& opt, std::vector<Vec<double>>* grads = nullptr) {
  const auto k = static_cast<Eigen::Index>(basis.k());
  std::vector<Transition> all;
  std::vector<Eigen::Index> s_first, q_first;
  for (const auto& e : episodes) {
    if (e.support.empty() || e.query.empty())
      throw InvalidInput("fe_episode_loss: episodes need support and query samples");
    s_first.push_back(static_cast<Eigen::Index>(all.size()));
    all.insert(all.end(), e.support.begin(), e.support.end());
    q_first.push_back(static_cast<Eigen::Index>(all.size()));
    all.insert(all.end(), e.query.begin(), e.query.end());
  }
  const auto batch = make_batch<double>(all);
  const Mat<double> targets = targets_of(all);
  std::vector<OdeTape<double>> tapes;
  const auto incs = basis_increments(basis, batch, grads ? &tapes : nullptr);

  const DimWeights sw = opt.weights.cwiseSqrt();
  std::vector<Mat<double>> d_incs;
  if (grads) d_incs.assign(incs.size(), Mat<double>::Zero(kStateDim, batch.size()));

  double total = 0.0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto m = static_cast<Eigen::Index>(episodes[e].support.size());
    const auto nq = static_cast<Eigen::Index>(episodes[e].query.size());
    const Eigen::MatrixXd p = detail::design_matrix(incs, s_first[e], m, sw);
    const Eigen::VectorXd tp = detail::stacked_targets(targets, s_first[e], m, sw);
    const Eigen::MatrixXd q = detail::design_matrix(incs, q_first[e], nq, sw);
    const Eigen::VectorXd tq = detail::stacked_targets(targets, q_first[e], nq, sw);

    const Eigen::MatrixXd gram = (p.transpose() * p) / static_cast<double>(m);
    const Eigen::VectorXd rhs = (p.transpose() * tp) / static_cast<double>(m);
    const double lambda =
        opt.reg.absolute + opt.reg.relative * gram.trace() / static_cast<double>(k);
    const Eigen::MatrixXd a = gram + lambda * Eigen::MatrixXd::Identity(k, k);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
      throw SingularSystem("fe_episode_loss: singular Gram system", 1.0 / reciprocal_condition(a));
    const Eigen::VectorXd alpha = llt.solve(rhs);
    const Eigen::VectorXd r = tq - q * alpha;
    const double scale = 1.0 / static_cast<double>(kStateDim * nq);
    total += r.squaredNorm() * scale;

    if (!grads) continue;
    // Query residual.
    const Eigen::MatrixXd dq = (-2.0 * scale) * r * alpha.transpose();
    const Eigen::VectorXd d_alpha = (-2.0 * scale) * (q.transpose() * r);
    // Through the regularized solve a * alpha = rhs.
    const Eigen::VectorXd y = llt.solve(d_alpha);
    Eigen::MatrixXd d_gram = -y * alpha.transpose();
    d_gram.diagonal().array() += d_gram.trace() * opt.reg.relative / static_cast<double>(k);
    const Eigen::MatrixXd dp =
        (p * (d_gram + d_gram.transpose()) + tp * y.transpose()) / static_cast<double>(m);
    for (Eigen::Index j = 0; j < k; ++j) {
      auto& dj = d_incs[static_cast<std::size_t>(j)];
      for (Eigen::Index s = 0; s < m; ++s)
        dj.col(s_first[e] + s) += dp.col(j).segment(kStateDim * s, kStateDim).cwiseProduct(sw);
      for (Eigen::Index s = 0; s < nq; ++s)
        dj.col(q_first[e] + s) += dq.col(j).segment(kStateDim * s, kStateDim).cwiseProduct(sw);
    }
  }

  if (grads) {
    grads->resize(incs.size());
    for (std::size_t j = 0; j < incs.size(); ++j) {
      (*grads)[j] = Vec<double>::Zero(basis.nets[j].num_params());
      integrate_field_backward(basis.nets[j], tapes[j], d_incs[j], (*grads)[j]);
    }
  }
  return total;
}

struct LossRow {
  int epoch = 0;
  double train_mse = 0.0;
  double val_interp_mse = std::numeric_limits<double>::quiet_NaN();
  double val_extrap_mse = std::numeric_limits<double>::quiet_NaN();
};

using LossHistory = std::vector<LossRow>;

inline void write_loss_csv(std::ostream& out, const LossHistory& h) {
  out << "epoch,train_mse,val_interp_mse,val_extrap_mse\n";
  for (const auto& r : h)
    out << r.epoch << ',' << fmt_double(r.train_mse) << ',' << fmt_double(r.val_interp_mse) << ','
        << fmt_double(r.val_extrap_mse) << '\n';
}

struct TrainConfig {
  int epochs = 300;
  int steps_per_epoch = 4;
  std::size_t batch_per_dataset = 32;
  double support_fraction = 0.5;
  AdamConfig adam{};
  FeLossOptions loss{};
  std::uint64_t seed = 0;
};

struct ValidationSets {
  std::optional<Episode> interp;
  std::optional<Episode> extrap;
};

struct FeTrainResult {
  BasisSet<double> basis;
  LossHistory history;
};

inline Vec<double> concat_params(const BasisSet<double>& b) {
  Eigen::Index n = 0;
  for (const auto& net : b.nets) n += net.num_params();
  Vec<double> out(n);
  Eigen::Index off = 0;
  for (const auto& net : b.nets) {
    out.segment(off, net.num_params()) = net.params();
    off += net.num_params();
  }
  return out;
}

inline void scatter_params(BasisSet<double>& b, const Vec<double>& flat) {
  Eigen::Index off = 0;
  for (auto& net : b.nets) {
    net.params() = flat.segment(off, net.num_params());
    off += net.num_params();
  }
}

inline FeTrainResult train(BasisSet<double> basis, std::span<const Dataset> datasets,
                           const TrainConfig& cfg, const ValidationSets& val = {}) {
  if (datasets.size() < 2) throw InvalidInput("train: need at least two datasets");
  for (const auto& d : datasets)
    if (d.size() < 2) throw InvalidInput("train: dataset '" + d.terrain_id + "' is too small");
  const auto support = static_cast<std::size_t>(
      std::max(1.0, std::round(cfg.support_fraction * static_cast<double>(cfg.batch_per_dataset))));
  MinibatchSampler sampler(cfg.seed);
  Vec<double> flat = concat_params(basis);
  OptimizerState opt(flat.size(), cfg.adam);
  FeTrainResult result;
  std::vector<Vec<double>> grads;
  Vec<double> g(flat.size());

  auto validate = [&](const std::optional<Episode>& e) {
    if (!e) return std::numeric_limits<double>::quiet_NaN();
    return fe_episode_loss(basis, std::span<const Episode>(&*e, 1), cfg.loss);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const auto eps = sampler.episodes(datasets, cfg.batch_per_dataset, support);
      double loss = 0.0;
      try {
        loss = fe_episode_loss(basis, eps, cfg.loss, &grads);
      } catch (const NumericError& e) {
        throw TrainingFailure(std::string("train: ") + e.what(), epoch);
      }
      Eigen::Index off = 0;
      for (const auto& gj : grads) {
        g.segment(off, gj.size()) = gj;
        off += gj.size();
      }
      if (!std::isfinite(loss) || !g.allFinite())
        throw TrainingFailure("train: loss diverged", epoch);
      adam_step(flat, g, opt);
      scatter_params(basis, flat);
      sum += loss / static_cast<double>(datasets.size());
    }
    result.history.push_back({epoch, sum / cfg.steps_per_epoch, validate(val.interp),
                              validate(val.extrap)});
  }
  result.basis = std::move(basis);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

template <class S>
nlohmann::json basis_to_json(const BasisSet<S>& b) {
  nlohmann::json j;
  j["format"] = "tafe.basis_set";
  j["format_version"] = b.format_version;
  j["k"] = b.k();
  j["integrator"] = {{"method", "rk4"}, {"substeps", b.substeps}};
  auto nets = nlohmann::json::array();
  for (const auto& n : b.nets) nets.push_back(mlp_to_json(n));
  j["nets"] = nets;
  return j;
}

inline BasisSet<double> basis_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "tafe.basis_set") throw LoadError("checkpoint: not a basis set");
    if (j.at("format_version").get<int>() != kBasisFormatVersion)
      throw LoadError("checkpoint: unsupported format version " +
                      std::to_string(j.at("format_version").get<int>()));
    BasisSet<double> b;
    b.substeps = j.at("integrator").at("substeps").get<int>();
    for (const auto& n : j.at("nets")) b.nets.push_back(mlp_from_json<double>(n));
    if (b.k() != j.at("k").get<int>()) throw LoadError("checkpoint: k does not match net count");
    if (b.k() < 1 || b.substeps < 1) throw LoadError("checkpoint: invalid basis settings");
    for (const auto& n : b.nets)
      if (n.layer_sizes() != b.nets.front().layer_sizes())
        throw LoadError("checkpoint: basis nets differ in architecture");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed: ") + e.what());
  } catch (const InvalidInput& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

template <class S>
void save_checkpoint(const std::filesystem::path& path, const BasisSet<S>& b) {
  write_json_file(path, basis_to_json(b));
}

inline BasisSet<double> load_checkpoint(const std::filesystem::path& path) {
  return basis_from_json(read_json_file(path));
}

}  // namespace tafe
