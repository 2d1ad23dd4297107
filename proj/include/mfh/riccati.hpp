#pragma once

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mfh/model.hpp"

namespace mfh {

struct RiccatiState {
  Matrix P1, Q1, P2, Q2;
  static RiccatiState zeros(int n);
};

/// The four Σ matrices of the coupled equations and their smallest
/// eigenvalues, in the order Σ0(P1), Σ2(P1), Σ̃0(P2), Σ̃2(P2).
struct SigmaBundle {
  Matrix sigma0, sigma2, tsigma0, tsigma2;
  std::array<double, 4> min_eig{};
  static constexpr std::array<const char*, 4> names{"Sigma0", "Sigma2", "SigmaTilde0",
                                                    "SigmaTilde2"};
  double min() const;
};

/// Positive definiteness threshold for every Σ margin.
inline constexpr double kSigmaThreshold = 1e-10;

struct GainEvaluation {
  GainTuple gains;
  SigmaBundle sigma;
};

SigmaBundle sigma_bundle(const MeanFieldJumpModel& model, double gamma, const RiccatiState& s);

/// Saddle gains at one instant. The deviation pair (K1, K2) and the mean pair
/// (K1 + K̃1, K2 + K̃2) are each the solution of a 2-block linear system, since
/// K1 depends on K2 through G1 and K2 on K1 through G2.
/// Throws SigmaNotPositive or CouplingSingular.
GainEvaluation gains_from(const MeanFieldJumpModel& model, double gamma, const RiccatiState& s);

/// Time derivative of (P1, Q1, P2, Q2) from the Riccati displays, with gains
/// evaluated at `s`.
RiccatiState gdre_rhs(const MeanFieldJumpModel& model, double gamma, const RiccatiState& s);

/// Time derivative with the gains held fixed: every equation becomes the
/// Lyapunov equation of the closed loop under both players. Agrees with
/// gdre_rhs when `g` equals gains_from(s).
RiccatiState gdre_rhs_frozen(const MeanFieldJumpModel& model, double gamma, const RiccatiState& s,
                             const GainTuple& g);

/// `paper`: gains frozen over each RK4 step. `stage`: gains recomputed at
/// every RK4 stage.
enum class GdreMode { paper, stage };

struct RiccatiFailure {
  double t = 0.0;
  std::string which;
  double min_eig = 0.0;
};

struct RiccatiTrajectory {
  double gamma = 0.0;
  /// Ascending time points that were computed. Equal to the full grid when
  /// feasible; otherwise starts just after the failure time.
  std::vector<double> grid;
  std::vector<RiccatiState> states;
  GainSchedule gains;
  std::vector<std::array<double, 4>> sigma_margins;
  bool feasible = false;
  std::optional<RiccatiFailure> failure;
};

/// Backward RK4 sweep from t = T with zero terminal data.
RiccatiTrajectory solve_gdre(const MeanFieldJumpModel& model, double gamma, double dt,
                             GdreMode mode = GdreMode::paper);

struct BrlSolution {
  std::vector<double> grid;
  std::vector<Matrix> P, Q;
  std::vector<std::array<double, 2>> margins;  // min eig of Σ0(P), Σ2(P)
  bool feasible = false;
  std::optional<double> failure_time;
};

BrlSolution solve_brl(const DisturbanceModelFn& dmodel, double T, double gamma, double dt);
BrlSolution solve_brl(const DisturbanceOnlyModel& dmodel, double gamma, double dt);

struct LyapunovCoefficients {
  Matrix A, C;
  std::vector<std::pair<double, Matrix>> jumps;  // (weight, Ẽ)
  Matrix source;
};
using LyapunovFn = std::function<LyapunovCoefficients(double t)>;

struct LyapunovSolution {
  std::vector<double> grid;
  std::vector<Matrix> P;
  std::vector<Matrix> dP;  // right-hand side at the grid points
};

/// Solves Ṗ + PÃ + Ã'P + C̃'PC̃ + Q̃ + Σ w Ẽ'PẼ = 0, P(T) = terminal, on the
/// given ascending grid. When every Q̃(t_k) and the terminal value are PSD the
/// result must be PSD; a violation beyond 1e-9 throws PositivityViolation.
LyapunovSolution lyapunov_solve(const LyapunovFn& coeffs, const Matrix& terminal,
                                const std::vector<double>& grid);

class PicardNoConvergence : public NoConvergence {
public:
  PicardNoConvergence(const std::string& what, std::vector<Matrix> last, std::vector<Matrix> prev)
      : NoConvergence(what), last_(std::move(last)), prev_(std::move(prev)) {}
  const std::vector<Matrix>& last() const { return last_; }
  const std::vector<Matrix>& previous() const { return prev_; }

private:
  std::vector<Matrix> last_, prev_;
};

struct PicardResult {
  std::vector<double> grid;
  std::vector<Matrix> P;
  std::vector<std::vector<Matrix>> history;  // every iterate, P_1 first
  int iterations = 0;
};

/// Picard iteration on the quasi-linear form of the P equation of the bounded
/// real lemma, starting from P̂ = 0.
PicardResult picard_solve(const DisturbanceModelFn& dmodel, double T, double gamma, double dt,
                          double tol, int max_iter);
PicardResult picard_solve(const DisturbanceOnlyModel& dmodel, double gamma, double dt, double tol,
                          int max_iter);

struct GammaSearch {
  double gamma_star = 0.0;
  double lo = 0.0, hi = 0.0;
  std::vector<std::pair<double, bool>> probes;  // (γ, feasible)
  bool monotone = true;
};

GammaSearch gamma_threshold(const MeanFieldJumpModel& model, double gamma_lo, double gamma_hi,
                            double tol, double dt, GdreMode mode = GdreMode::paper);

/// (J1, J2) = (tr(P1(0)Σ) + μ'Q1(0)μ, tr(P2(0)Σ) + μ'Q2(0)μ).
std::pair<double, double> value_at(const RiccatiTrajectory& traj, const Vector& mean_x0,
                                   const Matrix& cov_x0);

/// Zero-sum Riccati pair for the jump-free system, P ⪰ 0 convention with
/// γ²I − D1'PD1, plus the saddle gains u = L(x−Ex) + L̃Ex, v = F(x−Ex) + F̃Ex.
struct ZeroSumGains {
  Matrix L, Ltilde, F, Ftilde;
};

struct ZeroSumSolution {
  std::vector<double> grid;
  std::vector<Matrix> P, Q;
  std::vector<ZeroSumGains> gains;
  bool feasible = false;
};

ZeroSumGains zero_sum_gains(const MeanFieldJumpModel& model, double gamma, const Matrix& P,
                            const Matrix& Q);
ZeroSumSolution solve_zero_sum(const MeanFieldJumpModel& model, double gamma, double dt);

/// One row per grid point: t, P1, Q1, P2, Q2 entries (row-major), gains,
/// Σ margins and the four determinants, 17 significant digits.
void write_trajectory_csv(const RiccatiTrajectory& traj, std::ostream& out);

}  // namespace mfh
