#pragma once

#include <vector>

#include <Eigen/Dense>

#include "tafe/core.hpp"

namespace tafe {

/// Central Savitzky-Golay smoothing weights for an odd window and polynomial order.
inline Eigen::VectorXd savgol_coefficients(int window, int order) {
  if (window < 1 || window % 2 == 0) throw InvalidInput("savgol: window must be odd and positive");
  if (order < 0 || order >= window) throw InvalidInput("savgol: need 0 <= order < window");
  const int half = window / 2;
  Eigen::MatrixXd a(window, order + 1);
  for (int i = -half; i <= half; ++i)
    for (int p = 0; p <= order; ++p) a(i + half, p) = std::pow(static_cast<double>(i), p);
  // Row 0 of the pseudo-inverse evaluates the fitted polynomial at the center.
  const Eigen::MatrixXd pinv = (a.transpose() * a).ldlt().solve(a.transpose());
  return pinv.row(0).transpose();
}

/// Smooth a sequence with odd-reflection padding (x[-k] = 2 x[0] - x[k]) so
/// that sequences linear in t pass through unchanged, ends included.
/// The window shrinks when the sequence is shorter than it.
inline std::vector<double> savgol_filter(const std::vector<double>& x, int window, int order) {
  const int n = static_cast<int>(x.size());
  if (window > n) window = (n % 2 == 1) ? n : n - 1;
  if (window <= order || window < 3) return x;
  const Eigen::VectorXd c = savgol_coefficients(window, order);
  const int half = window / 2;
  auto at = [&](int i) {
    if (i < 0) return 2.0 * x[0] - x[static_cast<std::size_t>(-i)];
    if (i >= n) return 2.0 * x[static_cast<std::size_t>(n - 1)] - x[static_cast<std::size_t>(2 * (n - 1) - i)];
    return x[static_cast<std::size_t>(i)];
  };
  std::vector<double> y(x.size());
  for (int t = 0; t < n; ++t) {
    double s = 0.0;
    for (int j = -half; j <= half; ++j) s += c[j + half] * at(t + j);
    y[static_cast<std::size_t>(t)] = s;
  }
  return y;
}

}  // namespace tafe
