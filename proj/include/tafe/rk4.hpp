#pragma once

namespace tafe {

/// One classical Runge-Kutta step of dy/dt = f(y) with f autonomous over the step.
/// Y needs vector-space operators (Eigen vectors, scalars).
template <class Y, class F>
Y rk4_step(const Y& y, double h, F&& f) {
  const Y k1 = f(y);
  const Y k2 = f(Y(y + (0.5 * h) * k1));
  const Y k3 = f(Y(y + (0.5 * h) * k2));
  const Y k4 = f(Y(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class Y, class F>
Y rk4_integrate(const Y& y0, double duration, int substeps, F&& f) {
  Y y = y0;
  const double h = duration / substeps;
  for (int i = 0; i < substeps; ++i) y = rk4_step(y, h, f);
  return y;
}

}  // namespace tafe
