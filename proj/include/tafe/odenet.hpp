#pragma once

// Neural vector fields integrated with fixed-step RK4 over one control
// interval, batched over samples, with the matching reverse pass.
//
// The integrated quantity is the increment z(tau), z(0) = 0, with
//   dz/dtau = g(x0 + z, u)
// so the running state is always the start state plus the accumulated increment.

#include <span>
#include <vector>

#include "tafe/core.hpp"
#include "tafe/net.hpp"

namespace tafe {

/// Features seen by a field network: (vx, vy, wz, v_cmd, w_cmd, sin psi, cos psi).
inline constexpr int kFeatureDim = 7;

inline std::vector<int> default_field_layers(int hidden_width = 32, int hidden_layers = 2) {
  std::vector<int> sizes{kFeatureDim};
  for (int i = 0; i < hidden_layers; ++i) sizes.push_back(hidden_width);
  sizes.push_back(kStateDim);
  return sizes;
}

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

/// A batch of start states (6 x B), held controls (2 x B) and step lengths (1 x B).
template <class S>
struct SampleBatch {
  Mat<S> states;
  Mat<S> controls;
  RowVec<S> dt;

  [[nodiscard]] Eigen::Index size() const { return states.cols(); }
};

template <class S>
SampleBatch<S> make_batch(std::span<const Transition> ts) {
  const auto n = static_cast<Eigen::Index>(ts.size());
  SampleBatch<S> b{Mat<S>(kStateDim, n), Mat<S>(kControlDim, n), RowVec<S>(n)};
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& t = ts[static_cast<std::size_t>(c)];
    b.states.col(c) = t.x.vec().cast<S>();
    b.controls(0, c) = static_cast<S>(t.u.v_cmd);
    b.controls(1, c) = static_cast<S>(t.u.w_cmd);
    b.dt[c] = static_cast<S>(t.dt);
  }
  return b;
}

inline Mat<double> targets_of(std::span<const Transition> ts) {
  Mat<double> y(kStateDim, static_cast<Eigen::Index>(ts.size()));
  for (std::size_t i = 0; i < ts.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = ts[i].dx;
  return y;
}

template <class S>
Mat<S> field_features(const Mat<S>& running, const Mat<S>& controls) {
  Mat<S> f(kFeatureDim, running.cols());
  f.row(0) = running.row(3);
  f.row(1) = running.row(4);
  f.row(2) = running.row(5);
  f.row(3) = controls.row(0);
  f.row(4) = controls.row(1);
  f.row(5) = running.row(2).array().sin().matrix();
  f.row(6) = running.row(2).array().cos().matrix();
  return f;
}

/// Pull a feature-space adjoint back to the running state.
template <class S>
Mat<S> feature_adjoint_to_state(const Mat<S>& d_features, const Mat<S>& features) {
  Mat<S> d = Mat<S>::Zero(kStateDim, d_features.cols());
  d.row(3) = d_features.row(0);
  d.row(4) = d_features.row(1);
  d.row(5) = d_features.row(2);
  d.row(2) = (d_features.row(5).array() * features.row(6).array() -
              d_features.row(6).array() * features.row(5).array())
                 .matrix();
  return d;
}

template <class S>
struct OdeTape {
  std::vector<MlpTape<S>> evals;  // 4 per substep, in evaluation order
  RowVec<S> h;
  int substeps = 0;
};

/// Scale column c of m by s[c].
template <class S>
Mat<S> scale_cols(const Mat<S>& m, const RowVec<S>& s) {
  return (m.array().rowwise() * s.array()).matrix();
}

/// Increment of the field over [0, dt] for every sample in the batch (6 x B).
template <class S>
Mat<S> integrate_field(const Mlp<S>& net, const SampleBatch<S>& batch, int substeps,
                       OdeTape<S>* tape = nullptr) {
  if (net.input_dim() != kFeatureDim || net.output_dim() != kStateDim)
    throw InvalidInput("integrate_field: network shape does not match the feature map");
  if (substeps < 1 || batch.dt.size() != batch.size() || !(batch.dt.array() > S(0)).all())
    throw InvalidInput("integrate_field: bad step settings");
  const RowVec<S> h = batch.dt / static_cast<S>(substeps);
  const RowVec<S> h2 = h / S(2);
  const RowVec<S> h6 = h / S(6);
  if (tape) {
    tape->evals.assign(static_cast<std::size_t>(4 * substeps), MlpTape<S>{});
    tape->h = h;
    tape->substeps = substeps;
  }
  auto eval = [&](const Mat<S>& z, int idx) {
    const Mat<S> running = batch.states + z;
    return net.forward(field_features(running, batch.controls),
                       tape ? &tape->evals[static_cast<std::size_t>(idx)] : nullptr);
  };
  Mat<S> z = Mat<S>::Zero(kStateDim, batch.size());
  for (int n = 0; n < substeps; ++n) {
    const Mat<S> k1 = eval(z, 4 * n);
    const Mat<S> k2 = eval(z + scale_cols(k1, h2), 4 * n + 1);
    const Mat<S> k3 = eval(z + scale_cols(k2, h2), 4 * n + 2);
    const Mat<S> k4 = eval(z + scale_cols(k3, h), 4 * n + 3);
    z += scale_cols<S>(k1 + S(2) * k2 + S(2) * k3 + k4, h6);
  }
  return z;
}

/// Reverse pass of integrate_field: given dL/d(increment), accumulate dL/dparams.
template <class S>
void integrate_field_backward(const Mlp<S>& net, const OdeTape<S>& tape, const Mat<S>& d_increment,
                              Vec<S>& grad) {
  const RowVec<S>& h = tape.h;
  const RowVec<S> h2 = h / S(2);
  const RowVec<S> h3 = h / S(3);
  const RowVec<S> h6 = h / S(6);
  auto pull = [&](int idx, const Mat<S>& d_out) {
    const auto& t = tape.evals[static_cast<std::size_t>(idx)];
    const Mat<S> d_feat = net.backward(t, d_out, grad);
    return feature_adjoint_to_state(d_feat, Mat<S>(t.acts[0].leftCols(d_feat.cols())));
  };
  Mat<S> dz = d_increment;
  for (int n = tape.substeps; n-- > 0;) {
    const Mat<S> dk4 = scale_cols(dz, h6);
    Mat<S> dk3 = scale_cols(dz, h3);
    Mat<S> dk2 = dk3;
    Mat<S> dk1 = dk4;
    const Mat<S> dy4 = pull(4 * n + 3, dk4);
    dz += dy4;
    dk3 += scale_cols(dy4, h);
    const Mat<S> dy3 = pull(4 * n + 2, dk3);
    dz += dy3;
    dk2 += scale_cols(dy3, h2);
    const Mat<S> dy2 = pull(4 * n + 1, dk2);
    dz += dy2;
    dk1 += scale_cols(dy2, h2);
    dz += pull(4 * n, dk1);
  }
}

}  // namespace tafe
