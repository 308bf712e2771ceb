#pragma once

// Single neural ODE trained on pooled data from every training terrain.
// Shares the integrator, sampler, optimizer and checkpoint layout with the
// function encoder so the two are trained under identical budgets.

#include <span>
#include <vector>

#include "tafe/fenode.hpp"

namespace tafe {

template <class S>
struct NodeModel {
  Mlp<S> net;
  int substeps = kDefaultSubsteps;

  template <class T>
  [[nodiscard]] NodeModel<T> cast() const {
    return {net.template cast<T>(), substeps};
  }
};

inline NodeModel<double> make_node(const std::vector<int>& layers, std::uint64_t seed,
                                   int substeps = kDefaultSubsteps) {
  return {Mlp<double>(layers, derive_seed(seed, 0x6e6f6465ULL)), substeps};
}

template <class S>
Mat<S> predict_increments(const NodeModel<S>& model, const SampleBatch<S>& batch) {
  return integrate_field(model.net, batch, model.substeps);
}

template <class S>
Vec6 predict_increment(const NodeModel<S>& model, const State& x, const Control& u, double dt) {
  if (!(dt > 0)) throw InvalidInput("predict_increment: dt must be positive");
  const Transition t{x, u, dt, Vec6::Zero()};
  const Mat<S> inc = predict_increments(model, make_batch<S>(std::span<const Transition>(&t, 1)));
  if (!inc.allFinite()) throw NumericError("predicted increment is not finite");
  return inc.col(0).template cast<double>();
}

/// Mean squared increment error over `samples`, with the gradient when requested.
inline double node_loss(const NodeModel<double>& model, std::span<const Transition> samples,
                        const DimWeights& weights, Vec<double>* grad = nullptr) {
  if (samples.empty()) throw InvalidInput("node_loss: no samples");
  const auto batch = make_batch<double>(samples);
  const Mat<double> targets = targets_of(samples);
  OdeTape<double> tape;
  const Mat<double> pred = integrate_field(model.net, batch, model.substeps, grad ? &tape : nullptr);
  if (!pred.allFinite()) throw NumericError("node_loss: non-finite prediction");
  const double loss = increment_mse(pred, targets, weights);
  if (grad) {
    const double scale = -2.0 / static_cast<double>(kStateDim * targets.cols());
    const Mat<double> d = scale * ((targets - pred).array().colwise() * weights.array()).matrix();
    *grad = Vec<double>::Zero(model.net.num_params());
    integrate_field_backward(model.net, tape, d, *grad);
  }
  return loss;
}

struct NodeTrainResult {
  NodeModel<double> model;
  LossHistory history;
};

/// Same sampler stream as fenode's train(): the pooled batch is the union of
/// every episode's support and query samples.
inline NodeTrainResult train_node(NodeModel<double> model, std::span<const Dataset> datasets,
                                  const TrainConfig& cfg, const ValidationSets& val = {}) {
  if (datasets.empty()) throw InvalidInput("train_node: no data");
  for (const auto& d : datasets)
    if (d.empty()) throw InvalidInput("train_node: dataset '" + d.terrain_id + "' is empty");
  const auto support = static_cast<std::size_t>(
      std::max(1.0, std::round(cfg.support_fraction * static_cast<double>(cfg.batch_per_dataset))));
  MinibatchSampler sampler(cfg.seed);
  OptimizerState opt(model.net.num_params(), cfg.adam);
  NodeTrainResult result;
  Vec<double> grad;
  std::vector<Transition> pooled;

  auto validate = [&](const std::optional<Episode>& e) {
    if (!e) return std::numeric_limits<double>::quiet_NaN();
    return node_loss(model, e->query, cfg.loss.weights);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const auto eps = sampler.episodes(datasets, cfg.batch_per_dataset, support);
      pooled.clear();
      for (const auto& e : eps) {
        pooled.insert(pooled.end(), e.support.begin(), e.support.end());
        pooled.insert(pooled.end(), e.query.begin(), e.query.end());
      }
      double loss = 0.0;
      try {
        loss = node_loss(model, pooled, cfg.loss.weights, &grad);
      } catch (const NumericError& e) {
        throw TrainingFailure(std::string("train_node: ") + e.what(), epoch);
      }
      if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingFailure("train_node: loss diverged", epoch);
      adam_step(model.net.params(), grad, opt);
      sum += loss;
    }
    result.history.push_back({epoch, sum / cfg.steps_per_epoch, validate(val.interp),
                              validate(val.extrap)});
  }
  result.model = std::move(model);
  return result;
}

template <class S>
nlohmann::json node_to_json(const NodeModel<S>& m) {
  nlohmann::json j;
  j["format"] = "tafe.node_model";
  j["format_version"] = kBasisFormatVersion;
  j["integrator"] = {{"method", "rk4"}, {"substeps", m.substeps}};
  j["net"] = mlp_to_json(m.net);
  return j;
}

inline NodeModel<double> node_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "tafe.node_model") throw LoadError("checkpoint: not a node model");
    if (j.at("format_version").get<int>() != kBasisFormatVersion)
      throw LoadError("checkpoint: unsupported format version");
    NodeModel<double> m{mlp_from_json<double>(j.at("net")),
                        j.at("integrator").at("substeps").get<int>()};
    if (m.substeps < 1) throw LoadError("checkpoint: invalid substeps");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed: ") + e.what());
  } catch (const InvalidInput& e) {
    throw LoadError(std::string("checkpoint: ") + e.what());
  }
}

template <class S>
void save_node_checkpoint(const std::filesystem::path& path, const NodeModel<S>& m) {
  write_json_file(path, node_to_json(m));
}

inline NodeModel<double> load_node_checkpoint(const std::filesystem::path& path) {
  return node_from_json(read_json_file(path));
}

}  // namespace tafe
