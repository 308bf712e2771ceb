#pragma once

// Sliding-window coefficient identification during closed-loop operation.

#include <cstddef>
#include <deque>
#include <limits>
#include <memory>
#include <numbers>
#include <ostream>
#include <vector>

#include "tafe/fenode.hpp"
#include "tafe/models.hpp"

namespace tafe {

struct NoData : InvalidInput {
  using InvalidInput::InvalidInput;
};

enum class SolveFlag { ok = 0, fallback = 1, held = 2 };

inline constexpr std::size_t kNeverRefresh = std::numeric_limits<std::size_t>::max();

class AdaptationBuffer {
 public:
  /// refresh_period is in control steps; kNeverRefresh solves once, on the
  /// first refresh, and holds that solution.
  explicit AdaptationBuffer(std::size_t capacity = 100, std::size_t refresh_period = 1,
                            Regularization reg = {}, SolveOptions opts = {1e-12})
      : capacity_(capacity), period_(refresh_period), reg_(reg), opts_(opts) {
    if (capacity_ < 1) throw InvalidInput("adapt: capacity must be at least 1");
    if (period_ < 1) throw InvalidInput("adapt: refresh period must be at least 1");
  }

  void push(const Transition& t) {
    ring_.push_back(t);
    while (ring_.size() > capacity_) ring_.pop_front();
  }

  [[nodiscard]] std::size_t size() const { return ring_.size(); }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t refresh_period() const { return period_; }
  [[nodiscard]] bool empty() const { return ring_.empty(); }
  [[nodiscard]] std::vector<Transition> contents() const { return {ring_.begin(), ring_.end()}; }

  /// Solve from the current window. A singular system leaves the last valid
  /// coefficients in place and reports the fallback. With nothing to fall back
  /// on, the regularized solution is accepted without the conditioning check.
  template <class S>
  SolveFlag refresh(const BasisSet<S>& basis) {
    if (ring_.empty()) throw NoData("adapt: refresh on an empty buffer");
    const auto window = contents();
    const GramSystem sys = gram_system(basis, std::span<const Transition>(window), reg_);
    try {
      coeffs_ = solve_coefficients(sys, opts_);
      last_flag_ = SolveFlag::ok;
    } catch (const SingularSystem&) {
      if (!have_) coeffs_ = solve_coefficients(sys);
      last_flag_ = SolveFlag::fallback;
    }
    have_ = true;
    ++refreshes_;
    return last_flag_;
  }

  /// Refresh when the schedule says so; otherwise hold.
  template <class S>
  SolveFlag maybe_refresh(const BasisSet<S>& basis, std::size_t step) {
    const bool due = period_ == kNeverRefresh ? refreshes_ == 0 : step % period_ == 0;
    if (!due) return last_flag_ = SolveFlag::held;
    return refresh(basis);
  }

  void set_coefficients(Coefficients c) {
    coeffs_ = std::move(c);
    have_ = true;
  }

  [[nodiscard]] bool has_coefficients() const { return have_; }
  [[nodiscard]] const Coefficients& coefficients() const {
    if (!have_) throw NoData("adapt: no coefficients solved yet");
    return coeffs_;
  }
  [[nodiscard]] SolveFlag last_flag() const { return last_flag_; }

 private:
  std::size_t capacity_;
  std::size_t period_;
  Regularization reg_;
  SolveOptions opts_;
  std::deque<Transition> ring_;
  Coefficients coeffs_;
  bool have_ = false;
  SolveFlag last_flag_ = SolveFlag::held;
  std::size_t refreshes_ = 0;
};

/// Immutable (basis, alpha) snapshot; every rollout of a control step sees the same alpha.
template <class S>
FeModel<S> adaptive_model(std::shared_ptr<const BasisSet<S>> basis, const AdaptationBuffer& buffer) {
  return {std::move(basis), buffer.coefficients().alpha};
}

inline constexpr double kBootstrapSeconds = 2.0;

/// Open-loop sinusoidal excitation used to fill the buffer before a mission.
inline Control bootstrap_control(double t, const ControlLimits& lim = {}) {
  const double two_pi = 2.0 * std::numbers::pi;
  return lim.clamp({0.5 * lim.v_max * (1.0 + 0.5 * std::sin(two_pi * t / kBootstrapSeconds)),
                    0.6 * lim.w_max * std::sin(two_pi * t / 0.8)});
}

inline void write_adaptation_header(std::ostream& out, int k) {
  out << "step,window_size";
  for (int j = 1; j <= k; ++j) out << ",alpha_" << j;
  out << ",solve_flag\n";
}

inline void append_adaptation_row(std::ostream& out, std::size_t step, const AdaptationBuffer& b) {
  out << step << ',' << b.size();
  for (Eigen::Index j = 0; j < b.coefficients().alpha.size(); ++j)
    out << ',' << fmt_double(b.coefficients().alpha[j]);
  out << ',' << static_cast<int>(b.last_flag()) << '\n';
}

}  // namespace tafe
