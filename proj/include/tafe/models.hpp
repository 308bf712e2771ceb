#pragma once

// Black-box increment models consumed by rollouts and the controller.
//
// A model maps a batch of pose-zeroed states (6 x B) and held controls
// (2 x B) to body-frame increments over dt (6 x B).

#include <concepts>
#include <memory>

#include "tafe/fenode.hpp"
#include "tafe/node_baseline.hpp"
#include "tafe/simworld.hpp"

namespace tafe {

template <class M>
concept IncrementModel = requires(const M& m, const Mat<double>& states, const Mat<double>& controls,
                                  double dt) {
  { m.predict(states, controls, dt) } -> std::convertible_to<Mat<double>>;
};

namespace detail {
template <class S>
SampleBatch<S> to_batch(const Mat<double>& states, const Mat<double>& controls, double dt) {
  return {states.cast<S>(), controls.cast<S>(),
          RowVec<S>::Constant(states.cols(), static_cast<S>(dt))};
}
}  // namespace detail

struct ZeroModel {
  [[nodiscard]] Mat<double> predict(const Mat<double>& states, const Mat<double>&, double) const {
    return Mat<double>::Zero(kStateDim, states.cols());
  }
};

/// The simulator itself, as an increment model.
struct TruthModel {
  TerrainParams terrain;
  TruthConfig config{};

  [[nodiscard]] Mat<double> predict(const Mat<double>& states, const Mat<double>& controls,
                                    double dt) const {
    Mat<double> out(kStateDim, states.cols());
    for (Eigen::Index c = 0; c < states.cols(); ++c) {
      const State x = State::from_vec(states.col(c));
      const State next = step_truth(x, {controls(0, c), controls(1, c)}, terrain, dt, config);
      out.col(c) = body_frame_delta(x, next, dt).dx;
    }
    return out;
  }
};

/// Function encoder with a fixed coefficient snapshot. Coefficients never change
/// while the model is in use; adaptation builds a new snapshot between steps.
template <class S>
struct FeModel {
  std::shared_ptr<const BasisSet<S>> basis;
  Eigen::VectorXd alpha;

  [[nodiscard]] Mat<double> predict(const Mat<double>& states, const Mat<double>& controls,
                                    double dt) const {
    return predict_increments(*basis, alpha, detail::to_batch<S>(states, controls, dt))
        .template cast<double>();
  }
};

template <class S>
struct NodeIncrementModel {
  std::shared_ptr<const NodeModel<S>> model;

  [[nodiscard]] Mat<double> predict(const Mat<double>& states, const Mat<double>& controls,
                                    double dt) const {
    return predict_increments(*model, detail::to_batch<S>(states, controls, dt))
        .template cast<double>();
  }
};

/// Single-sample convenience wrapper.
template <IncrementModel M>
Vec6 predict_one(const M& model, const State& x, const Control& u, double dt) {
  Mat<double> s = x.vec();
  Mat<double> c(kControlDim, 1);
  c << u.v_cmd, u.w_cmd;
  return model.predict(s, c, dt).col(0);
}

}  // namespace tafe
