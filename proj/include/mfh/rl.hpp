#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfh/model.hpp"
#include "mfh/simulate.hpp"

namespace mfh {

// ---------------------------------------------------------------------------
// Quadratic encodings

/// [p11, 2p12, ..., 2p1n, p22, ..., pnn]. Throws InvalidArgument when P is
/// asymmetric by more than 1e-12 (relative to max(1, |P|max)).
Vector svec(const Matrix& P);
Matrix smat(const Vector& v, int n);
/// Quadratic monomials [x1², x1x2, ..., x1xn, x2², ..., xn²].
Vector xbar(const Vector& x);
/// Upper triangle of a square matrix in row order, without doubling, so that
/// <svec(S), vech(X)> = tr(SX) for symmetric S and X.
Vector vech(const Matrix& X);

inline int tri(int n) { return n * (n + 1) / 2; }

/// Column offsets of the unknown blocks inside Ξ.
struct XiLayout {
  int n = 0, nu = 0, nv = 0;
  int Q_next = 0, Q_now = 0, Bt2 = 0, Bt1 = 0, B2 = 0, B1 = 0;
  int Dt2 = 0, Dt1 = 0, D2 = 0, D1 = 0, H = 0, Ht = 0, P_next = 0;
  int g = 0;
  XiLayout(int n, int nu, int nv);
};

/// 3n(n+1)/2 + 2 nu n + 2 nv n + nu(nu+1) + nv(nv+1) + 2 nu nv.
int unknown_count(int n, int nu, int nv);

// ---------------------------------------------------------------------------
// Policies, evaluation and improvement

/// u = L(x − Ex) + L̃ Ex,  v = F(x − Ex) + F̃ Ex.
struct RlGains {
  Matrix L, Ltilde, F, Ftilde;
  static RlGains zeros(const Dims& d);
};

/// Gains held constant on each interval [t_i, t_{i+1}] of `grid`.
struct PiecewiseGains {
  std::vector<double> grid;  // N + 1 interval boundaries
  std::vector<RlGains> gains;  // N entries
  std::size_t intervals() const { return gains.size(); }
  const RlGains& on(double t) const;
};

PiecewiseGains uniform_gains(const std::vector<double>& grid, const RlGains& g);

struct EvaluatedPolicy {
  std::vector<double> grid;  // fine grid, K steps per interval
  std::vector<Matrix> P, Q;
  int substeps = 0;
  /// P and Q at the interval boundaries and midpoints.
  Matrix P_at(std::size_t interval, double frac) const;
  Matrix Q_at(std::size_t interval, double frac) const;
};

/// Backward linear Lyapunov equations for (P, Q) under the given gains, with
/// P(T) = Q(T) = 0. `substeps` RK4 steps per interval (must be even).
EvaluatedPolicy pe_oracle(const MeanFieldJumpModel& model, const PiecewiseGains& gains, double gamma,
                          int substeps = 20);

/// The products the regression identifies: B̃2, B̃1, B2, B1 (rows = input),
/// D̃2, D̃1, D2, D1 (symmetric), H = D2'PD1 and H̃.
struct XiBlocks {
  Matrix Q_next, Q_now, P_next;
  Matrix Bt2, Bt1, B2, B1, Dt2, Dt1, D2, D1, H, Ht;
};

/// Blocks evaluated from model coefficients at (P, Q) under gains (L, L̃, F, F̃).
XiBlocks model_blocks(const MeanFieldJumpModel& model, const Matrix& P, const Matrix& Q,
                      const RlGains& gains);

Vector pack(const XiBlocks& b);
XiBlocks unpack(const Vector& xi, const XiLayout& layout);

enum class ImproveWhich { control, disturbance, both };

/// Policy improvement from identified blocks. `control` updates (L, L̃),
/// `disturbance` updates (F, F̃); untouched gains are copied from `prev`.
/// Throws SingularImprovement when a bracket is not invertible (or, for the
/// disturbance, γ²I − D1 block is not positive definite).
RlGains improve(const XiBlocks& blocks, const RlGains& prev, double gamma, ImproveWhich which);

/// The same update with the products formed from the model coefficients.
RlGains improve(const MeanFieldJumpModel& model, const Matrix& P, const Matrix& Q,
                const RlGains& prev, double gamma, ImproveWhich which);

// ---------------------------------------------------------------------------
// Data

/// Conditional moments of one restart on [t0, t1] from a deterministic state.
/// With w = (y, u − Eu, v − Ev), y = x − Ex and w̄ = (Ex, Eu, Ev):
struct IntervalMoments {
  Vector x_start;   // x(t0)
  Vector mean_end;  // E[x(t1)]
  Matrix cov_end;   // E[y y'](t1)
  Matrix S_dev;     // ∫ E[w w'] dt
  Matrix S_mean;    // ∫ w̄ w̄' dt
};

/// Behaviour signals for one initial state: feedback gains come from the
/// PiecewiseGains, exploration is added on top.
struct ExplorationPair {
  Exploration u, v;
};

/// `terms` sinusoids per input row with frequencies uniform in [w_lo, w_hi],
/// applied both as a common signal (moves the mean) and with a random phase
/// per particle (excites the deviation).
std::vector<ExplorationPair> make_exploration(std::uint64_t seed, int count, int nu, int nv,
                                              double amplitude, int terms = 10, double w_lo = 1.0,
                                              double w_hi = 50.0);

class Plant {
public:
  virtual ~Plant() = default;
  virtual IntervalMoments run(double t0, double t1, int substeps, const Vector& x0,
                              const RlGains& behaviour, const ExplorationPair& explore,
                              std::uint64_t seed) const = 0;
  virtual Dims dims() const = 0;
  virtual long paths() const = 0;  // 0 for exact expectations
};

/// Exact expectations: integrates the augmented second-moment equation of
/// (y, ζ), where ζ collects the (sin φ, cos φ) pairs of the random phases.
class MomentPlant : public Plant {
public:
  explicit MomentPlant(MeanFieldJumpModel model);
  IntervalMoments run(double t0, double t1, int substeps, const Vector& x0, const RlGains& behaviour,
                      const ExplorationPair& explore, std::uint64_t seed) const override;
  Dims dims() const override { return model_.dims; }
  long paths() const override { return 0; }

private:
  MeanFieldJumpModel model_;
};

/// Sample averages over `paths` particles simulated from the common state.
class ParticlePlant : public Plant {
public:
  ParticlePlant(MeanFieldJumpModel model, long paths);
  IntervalMoments run(double t0, double t1, int substeps, const Vector& x0, const RlGains& behaviour,
                      const ExplorationPair& explore, std::uint64_t seed) const override;
  Dims dims() const override { return model_.dims; }
  long paths() const override { return paths_; }

private:
  MeanFieldJumpModel model_;
  long paths_;
};

struct DataSet {
  std::vector<double> grid;  // interval boundaries
  int substeps = 0;
  long paths = 0;
  /// moments[i][q]: interval i, initial state q.
  std::vector<std::vector<IntervalMoments>> moments;
  std::size_t states() const { return moments.empty() ? 0 : moments.front().size(); }
};

/// Runs each initial state through all intervals, restarting every interval
/// from the previous interval's mean.
DataSet collect(const Plant& plant, const PiecewiseGains& behaviour,
                const std::vector<ExplorationPair>& explore, const std::vector<Vector>& initial_states,
                int substeps, std::uint64_t seed);

/// `count` initial states with entries uniform in [-scale, scale].
std::vector<Vector> make_initial_states(std::uint64_t seed, int count, int n, double scale = 1.0);

// ---------------------------------------------------------------------------
// Regression

struct RegressionBatch {
  Matrix Phi;
  Vector Theta;
  std::size_t interval = 0;
  int rank = 0;
  double sigma_min = 0.0, sigma_max = 0.0;
};

/// Rows of Φ and Θ for interval i under the current iterate.
RegressionBatch assemble(const DataSet& data, const RlGains& current, const Matrix& MtM, double gamma,
                         std::size_t interval);

/// One regression row from a single moment record.
void regression_row(const IntervalMoments& m, const RlGains& g, const Matrix& MtM, double gamma,
                    Eigen::Ref<Vector> phi, double& theta);

enum class LeastSquares { orthogonal, normal_equations };

/// Throws RankDeficient when the rank of Φ is below g.
Vector solve_interval(const RegressionBatch& batch, LeastSquares method = LeastSquares::orthogonal);

// ---------------------------------------------------------------------------
// Algorithm

struct AlgorithmSettings {
  double gamma = 5.0;
  double eps = 1e-8;   // outer stop on F, F̃
  double eps1 = 1e-8;  // inner stop on P, Q
  int max_outer = 50;
  int max_inner = 50;
  LeastSquares method = LeastSquares::orthogonal;
};

struct AlgorithmReport {
  int outer_iterations = 0;
  std::vector<int> inner_iterations;
  std::vector<double> outer_distance;  // max ‖F^k − F^{k−1}‖, ‖F̃^k − F̃^{k−1}‖
  std::vector<double> inner_distance;  // max ‖P^j − P^{j−1}‖, ‖Q^j − Q^{j−1}‖, all inner passes
  std::vector<double> condition;       // σmax/σmin of Φ per interval, last pass
  /// max_i ‖Q(t_{i+1}) from interval i − Q(t_{i+1}) from interval i+1‖.
  double interval_mismatch = 0.0;
  bool converged = false;
};

struct AlgorithmResult {
  PiecewiseGains gains;
  std::vector<Matrix> P_next, Q_next, Q_now;  // per interval, last identification
  AlgorithmReport report;
};

/// Policy iteration driven entirely by `data` (collected once). Throws
/// NoConvergence if either loop exhausts its budget.
AlgorithmResult run_algorithm1(const DataSet& data, const PiecewiseGains& init, const Matrix& MtM,
                               const AlgorithmSettings& settings);

/// The same loop structure with exact policy evaluation (pe_oracle) in place
/// of the regression; its fixed point is the reference for the data-driven one.
AlgorithmResult run_model_based(const MeanFieldJumpModel& model, const PiecewiseGains& init,
                                const AlgorithmSettings& settings, int substeps = 20);

/// Gains from the zero-sum Riccati pair evaluated at interval midpoints.
PiecewiseGains reference_gains(const MeanFieldJumpModel& model, double gamma,
                               const std::vector<double>& grid, double dt);

/// Largest entrywise gap over all intervals and all four gains.
double gain_gap(const PiecewiseGains& a, const PiecewiseGains& b);

/// Starting gains for testing: the large-γ (LQR-like) reference gains.
PiecewiseGains initial_gains(const MeanFieldJumpModel& model, const std::vector<double>& grid);

/// The 2-D diffusion-only test system used for the recovery checks.
MeanFieldJumpModel rl_example();

}  // namespace mfh
