#pragma once

// Multilayer perceptrons with hand-written reverse mode, and Adam.
// Batches are column-major: one sample per column.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "tafe/core.hpp"

namespace tafe {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// tanh via exp, which Eigen vectorizes for both float and double.
/// exp overflowing to inf still gives the correct limit of 1.
template <class Derived>
void tanh_inplace(Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  auto a = m.array();
  a = S(1) - S(2) / ((S(2) * a).exp() + S(1));
}

inline constexpr Eigen::Index kColumnBlock = 8;

template <class S>
struct MlpTape {
  // acts[0] is the input, acts[l] the output of layer l (tanh applied on hidden layers).
  std::vector<Mat<S>> acts;
};

template <class S>
class Mlp {
 public:
  using Scalar = S;

  Mlp() = default;

  /// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  Mlp(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
    allocate();
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      std::uniform_real_distribution<double> dist(-bound, bound);
      auto w = weight(l);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<S>(dist(rng));
      auto b = bias(l);
      for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = static_cast<S>(dist(rng));
    }
  }

  static Mlp zeros(std::vector<int> layer_sizes) {
    Mlp m;
    m.sizes_ = std::move(layer_sizes);
    m.allocate();
    return m;
  }

  [[nodiscard]] const std::vector<int>& layer_sizes() const { return sizes_; }
  [[nodiscard]] int input_dim() const { return sizes_.front(); }
  [[nodiscard]] int output_dim() const { return sizes_.back(); }
  [[nodiscard]] std::size_t num_layers() const { return sizes_.size() - 1; }
  [[nodiscard]] Eigen::Index num_params() const { return params_.size(); }

  [[nodiscard]] Vec<S>& params() { return params_; }
  [[nodiscard]] const Vec<S>& params() const { return params_; }

  Eigen::Map<Mat<S>> weight(std::size_t l) {
    return {params_.data() + w_off_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Mat<S>> weight(std::size_t l) const {
    return {params_.data() + w_off_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vec<S>> bias(std::size_t l) { return {params_.data() + b_off_[l], sizes_[l + 1]}; }
  Eigen::Map<const Vec<S>> bias(std::size_t l) const {
    return {params_.data() + b_off_[l], sizes_[l + 1]};
  }

  template <class T>
  [[nodiscard]] Mlp<T> cast() const {
    Mlp<T> out = Mlp<T>::zeros(sizes_);
    out.params() = params_.template cast<T>();
    return out;
  }

  /// Batch forward. When `tape` is given, activations are recorded for backward().
  ///
  /// Columns are padded to a multiple of kColumnBlock before the products so a
  /// column's result never depends on the batch it was evaluated in.
  [[nodiscard]] Mat<S> forward(const Mat<S>& input, MlpTape<S>* tape = nullptr) const {
    if (input.rows() != sizes_.front())
      throw InvalidInput("Mlp::forward: input has " + std::to_string(input.rows()) +
                         " rows, expected " + std::to_string(sizes_.front()));
    const Eigen::Index b = input.cols();
    const Eigen::Index padded = (b + kColumnBlock - 1) / kColumnBlock * kColumnBlock;
    Mat<S> h;
    if (padded != b) {
      h.resize(input.rows(), padded);
      h.leftCols(b) = input;
      h.rightCols(padded - b).setZero();
    }
    const Mat<S>& in = padded != b ? h : input;
    if (tape) {
      tape->acts.resize(sizes_.size());
      tape->acts[0] = in;
    }
    for (std::size_t l = 0; l < num_layers(); ++l) {
      Mat<S> z;
      z.noalias() = weight(l) * (l == 0 ? in : h);
      z.colwise() += bias(l);
      if (l + 1 < num_layers()) tanh_inplace(z);
      h = std::move(z);
      if (tape) tape->acts[l + 1] = h;
    }
    if (padded == b) return h;
    return h.leftCols(b);
  }

  [[nodiscard]] Vec<S> forward_one(const Vec<S>& input) const {
    return forward(Mat<S>(input)).col(0);
  }

  /// Reverse pass: accumulates dL/dparams into `grad` and returns dL/dinput.
  Mat<S> backward(const MlpTape<S>& tape, const Mat<S>& d_output, Vec<S>& grad) const {
    if (grad.size() != params_.size()) grad = Vec<S>::Zero(params_.size());
    const Eigen::Index b = d_output.cols();
    Mat<S> delta = Mat<S>::Zero(d_output.rows(), tape.acts.front().cols());
    delta.leftCols(b) = d_output;
    for (std::size_t l = num_layers(); l-- > 0;) {
      if (l + 1 < num_layers()) {
        const auto& h = tape.acts[l + 1];
        delta.array() *= (S(1) - h.array().square());
      }
      Eigen::Map<Mat<S>> gw(grad.data() + w_off_[l], sizes_[l + 1], sizes_[l]);
      Eigen::Map<Vec<S>> gb(grad.data() + b_off_[l], sizes_[l + 1]);
      gw.noalias() += delta * tape.acts[l].transpose();
      gb += delta.rowwise().sum();
      delta = weight(l).transpose() * delta;
    }
    return delta.leftCols(b);
  }

 private:
  void allocate() {
    if (sizes_.size() < 2) throw InvalidInput("Mlp: need at least input and output sizes");
    for (int s : sizes_)
      if (s <= 0) throw InvalidInput("Mlp: layer sizes must be positive");
    Eigen::Index off = 0;
    w_off_.clear();
    b_off_.clear();
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      w_off_.push_back(off);
      off += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1];
      b_off_.push_back(off);
      off += sizes_[l + 1];
    }
    params_ = Vec<S>::Zero(off);
  }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> w_off_, b_off_;
  Vec<S> params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  Vec<double> m;
  Vec<double> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  OptimizerState(Eigen::Index n, AdamConfig cfg)
      : config(cfg), m(Vec<double>::Zero(n)), v(Vec<double>::Zero(n)) {}
};

/// Bias-corrected Adam update, in place.
inline void adam_step(Eigen::Ref<Vec<double>> params, const Vec<double>& grads, OptimizerState& opt) {
  if (params.size() != grads.size() || params.size() != opt.m.size())
    throw InvalidInput("adam_step: shape mismatch");
  const auto& c = opt.config;
  ++opt.step;
  opt.m = c.beta1 * opt.m + (1.0 - c.beta1) * grads;
  opt.v = c.beta2 * opt.v + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  params.array() -= c.learning_rate * (opt.m.array() / bc1) /
                    ((opt.v.array() / bc2).sqrt() + c.epsilon);
}

// ---------------------------------------------------------------------------
// Serialization: layer sizes, row-major weights, biases.

inline constexpr int kMlpFormatVersion = 1;

template <class S>
nlohmann::json mlp_to_json(const Mlp<S>& net) {
  nlohmann::json j;
  j["format_version"] = kMlpFormatVersion;
  j["layer_sizes"] = net.layer_sizes();
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto w = net.weight(l);
    std::vector<double> rows;
    rows.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) rows.push_back(static_cast<double>(w(r, c)));
    const auto b = net.bias(l);
    std::vector<double> bias(b.data(), b.data() + b.size());
    layers.push_back({{"weights", rows}, {"biases", bias}});
  }
  j["layers"] = layers;
  return j;
}

template <class S>
Mlp<S> mlp_from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kMlpFormatVersion)
    throw InvalidInput("mlp: unsupported format version");
  auto net = Mlp<S>::zeros(j.at("layer_sizes").get<std::vector<int>>());
  const auto& layers = j.at("layers");
  if (layers.size() != net.num_layers()) throw InvalidInput("mlp: layer count mismatch");
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto rows = layers[l].at("weights").get<std::vector<double>>();
    const auto bias = layers[l].at("biases").get<std::vector<double>>();
    auto w = net.weight(l);
    auto b = net.bias(l);
    if (rows.size() != static_cast<std::size_t>(w.size()) ||
        bias.size() != static_cast<std::size_t>(b.size()))
      throw InvalidInput("mlp: parameter shape mismatch");
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = static_cast<S>(rows[i++]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b[r] = static_cast<S>(bias[r]);
  }
  return net;
}

}  // namespace tafe
