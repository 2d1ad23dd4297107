#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <utility>
#include <vector>

#include "mfh/model.hpp"

namespace mfh {

struct NoiseSpec {
  std::uint64_t seed = 0;
  long particles = 10000;
  double dt = 1e-3;
  double t0 = 0.0;
  double t1 = -1.0;  // negative: use the model horizon
  bool store_paths = false;
};

struct Sinusoid {
  double amplitude = 0.0;
  double omega = 0.0;
  double phase = 0.0;  // ignored for per-particle terms, which draw their own
};

/// Additive exploration signal. `common[r]` is shared by all particles and
/// moves the ensemble mean; `per_particle[r]` uses an independent uniform
/// phase per particle and so excites the deviation from the mean. `white`
/// adds an independent N(0, white²) draw per particle and step.
struct Exploration {
  std::vector<std::vector<Sinusoid>> common;
  std::vector<std::vector<Sinusoid>> per_particle;
  double white = 0.0;
  /// Per-particle phases are drawn from stream `phase_stream` (default: one
  /// stream per player). Two policies naming the same stream share the phase
  /// of their j-th per-particle term, which correlates their excitation.
  int phase_stream = -1;
};

/// Feedback (x - x̄) ↦ K(x - x̄) + K_sum x̄ with x̄ the ensemble mean, plus a
/// constant offset and exploration.
struct PolicySpec {
  enum class Kind { zero, gain_schedule, external };
  Kind kind = Kind::zero;
  std::function<std::pair<Matrix, Matrix>(double)> gains;  // (K, K_sum) at t
  /// External policy: fills `out` (dim × Np) from t and the particle states.
  std::function<void(double t, const Matrix& X, Matrix& out)> external;
  Vector offset;
  Exploration exploration;

  static PolicySpec zero();
  static PolicySpec constant(const Vector& c);
  static PolicySpec feedback(std::function<std::pair<Matrix, Matrix>(double)> gains);
  /// u* = K2(x - x̄) + (K2 + K̃2) x̄ along the schedule.
  static PolicySpec control(const GainSchedule& s);
  /// v* = K1(x - x̄) + (K1 + K̃1) x̄ along the schedule.
  static PolicySpec disturbance(const GainSchedule& s);
  static PolicySpec white_noise(double amplitude);
};

/// Initial law: mean + chol(cov) ξ per particle (cov may be empty).
struct InitialState {
  Vector mean;
  Matrix cov;
  static InitialState deterministic(const Vector& x0) { return {x0, Matrix()}; }
};

struct PathBundle {
  std::vector<double> grid;
  int n = 0, nu = 0, nv = 0;
  long particles = 0;
  std::vector<Vector> mean_x, mean_u, mean_v;
  /// Per-particle trapezoidal integrals of |Mx|², |u|² and |v|².
  Vector int_Mx2, int_u2, int_v2;
  /// Full paths per grid point (dim × Np); filled only when store_paths.
  std::vector<Matrix> X, U, V;
  std::vector<long> jump_counts;  // total firings per atom
  Matrix x_final;                 // n × Np
};

/// Euler-Maruyama particle approximation of the mean-field jump diffusion.
/// Throws DivergedPath on a non-finite or exploding state.
PathBundle simulate(const MeanFieldJumpModel& model, const PolicySpec& u_policy,
                    const PolicySpec& v_policy, const NoiseSpec& noise, const InitialState& x0);

/// sqrt(mean ∫|z|²) / sqrt(mean ∫|v|²) with z = (Mx, u).
double empirical_gain(const PathBundle& b);

enum class CostKind { J1, J2, Jinf };

/// Ensemble mean and standard error of the per-particle cost integral.
std::pair<double, double> estimate_cost(const PathBundle& b, CostKind kind, double gamma);

/// Ensemble means over time: t, x̄, ū, v̄ at 17 significant digits.
void write_means_csv(const PathBundle& b, std::ostream& out);

}  // namespace mfh
