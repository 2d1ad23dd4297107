#pragma once

#include <Eigen/Dense>

namespace mfh {

/// One classical RK4 step taken backward in time, from t to t - h (h > 0).
/// `f(t, y)` returns dy/dt; the state type needs +, - and scalar *.
template <class State, class Rhs>
State rk4_step_backward(double t, double h, const State& y, Rhs&& f) {
  const State k1 = f(t, y);
  const State k2 = f(t - 0.5 * h, State(y - (0.5 * h) * k1));
  const State k3 = f(t - 0.5 * h, State(y - (0.5 * h) * k2));
  const State k4 = f(t - h, State(y - h * k3));
  return y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// Forward counterpart, from t to t + h.
template <class State, class Rhs>
State rk4_step_forward(double t, double h, const State& y, Rhs&& f) {
  const State k1 = f(t, y);
  const State k2 = f(t + 0.5 * h, State(y + (0.5 * h) * k1));
  const State k3 = f(t + 0.5 * h, State(y + (0.5 * h) * k2));
  const State k4 = f(t + h, State(y + h * k3));
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace mfh
