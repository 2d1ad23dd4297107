#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "doctest.h"
#include "mfh/integrator.hpp"
#include "mfh/riccati.hpp"
#include "mfh/rl.hpp"

using namespace mfh;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Matrix mat1(double a) { return Matrix::Constant(1, 1, a); }

MeanFieldJumpModel scalar_model() {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({1, 1, 1}, 1, 1.0);
  m.A = mat1(1.0);
  m.B2 = mat1(1.0);
  m.M = mat1(1.0);
  return m;
}

// Stationary solution of X Acl + Acl'X + S = 0 for 2×2 matrices.
Matrix stationary_lyapunov(const Matrix& Acl, const Matrix& S) {
  Matrix K = Matrix::Zero(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        K(i + 2 * j, i + 2 * k) += Acl(k, j);
        K(i + 2 * j, k + 2 * j) += Acl(k, i);
      }
  Matrix R = -S;
  Vector x = K.fullPivLu().solve(Eigen::Map<Vector>(R.data(), 4));
  return symmetrize(Eigen::Map<Matrix>(x.data(), 2, 2));
}

// A (P, Q) pair that is exactly constant in time under gains g: P is chosen,
// then M'M is defined so that P solves the deviation equation with zero
// derivative, and Q solves the stationary mean equation.
struct StationaryPair {
  Matrix P, Q, MtM;
};

StationaryPair stationary_pair(const MeanFieldJumpModel& m, const RlGains& g, double gamma) {
  const double g2 = gamma * gamma;
  const Matrix Acl = m.A + m.B2 * g.L + m.B1 * g.F;
  const Matrix Ccl = m.C + m.D2 * g.L + m.D1 * g.F;
  const Matrix Ams = m.A + m.Abar + (m.B2 + m.B2bar) * g.Ltilde + (m.B1 + m.B1bar) * g.Ftilde;
  const Matrix Cms = m.C + m.Cbar + (m.D2 + m.D2bar) * g.Ltilde + (m.D1 + m.D1bar) * g.Ftilde;
  StationaryPair s;
  s.P.resize(2, 2);
  s.P << 2.0, 0.3, 0.3, 1.0;
  const Matrix W = -(s.P * Acl + Acl.transpose() * s.P + Ccl.transpose() * s.P * Ccl);
  s.MtM = W - g.L.transpose() * g.L + g2 * g.F.transpose() * g.F;
  const Matrix Wt = s.MtM + g.Ltilde.transpose() * g.Ltilde - g2 * g.Ftilde.transpose() * g.Ftilde;
  s.Q = stationary_lyapunov(Ams, Cms.transpose() * s.P * Cms + Wt);
  return s;
}

Vector stationary_xi(const MeanFieldJumpModel& m, const StationaryPair& s, const RlGains& g) {
  XiBlocks b = model_blocks(m, s.P, s.Q, g);
  b.P_next = s.P;
  b.Q_next = s.Q;
  b.Q_now = s.Q;
  return pack(b);
}

double rel_residual(const RegressionBatch& b, const Vector& xi) {
  return (b.Phi * xi - b.Theta).cwiseAbs().maxCoeff() / b.Theta.cwiseAbs().maxCoeff();
}

// Gains of the zero-sum pair far from the terminal time (a long horizon).
RlGains long_horizon_gains(MeanFieldJumpModel m, double gamma) {
  m.T = 30.0;
  const ZeroSumSolution z = solve_zero_sum(m, gamma, 0.01);
  REQUIRE(z.feasible);
  const ZeroSumGains& g = z.gains.front();
  return {g.L, g.Ltilde, g.F, g.Ftilde};
}

double gains_vs(const PiecewiseGains& pg, const RlGains& g) {
  double d = 0.0;
  for (const RlGains& a : pg.gains)
    d = std::max({d, (a.L - g.L).cwiseAbs().maxCoeff(), (a.Ltilde - g.Ltilde).cwiseAbs().maxCoeff(),
                  (a.F - g.F).cwiseAbs().maxCoeff(), (a.Ftilde - g.Ftilde).cwiseAbs().maxCoeff()});
  return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Encodings

TEST_CASE("svec doubles off-diagonal entries") {
  const Vector id = svec(Matrix::Identity(2, 2));
  REQUIRE(id.size() == 3);
  CHECK(id(0) == 1.0);
  CHECK(id(1) == 0.0);
  CHECK(id(2) == 1.0);
  Matrix P(2, 2);
  P << 1, 2, 2, 3;
  const Vector s = svec(P);
  REQUIRE(s.size() == 3);
  CHECK(s(0) == 1.0);
  CHECK(s(1) == 4.0);
  CHECK(s(2) == 3.0);
  CHECK(svec(mat1(5.0)) == Vector::Constant(1, 5.0));
  CHECK(smat(svec(mat1(5.0)), 1) == mat1(5.0));
}

TEST_CASE("svec rejects asymmetric input") {
  Matrix P(2, 2);
  P << 1, 2, 2.001, 3;
  CHECK_THROWS_AS(svec(P), InvalidArgument);
}

TEST_CASE("xbar lists quadratic monomials") {
  const Vector x = xbar(vec2(1, 2));
  REQUIRE(x.size() == 3);
  CHECK(x(0) == 1.0);
  CHECK(x(1) == 2.0);
  CHECK(x(2) == 4.0);
  CHECK(xbar(Vector::Zero(3)) == Vector::Zero(6));
}

TEST_CASE("svec, smat and xbar identities on random inputs") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 4;
    Matrix R(n, n);
    for (int i = 0; i < R.size(); ++i) R(i) = nd(rng);
    const Matrix P = 0.5 * (R + R.transpose());
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = nd(rng);
    CHECK((smat(svec(P), n) - P).cwiseAbs().maxCoeff() == 0.0);
    const double quad = x.dot(P * x);
    CHECK(std::abs(svec(P).dot(xbar(x)) - quad) <= 1e-12 * std::max(1.0, std::abs(quad)));
    Matrix S = R * R.transpose();
    CHECK(std::abs(svec(P).dot(vech(S)) - (P * S).trace()) <= 1e-12 * std::max(1.0, S.norm() * P.norm()));
  }
}

TEST_CASE("unknown count matches the block layout for all small dimensions") {
  CHECK(unknown_count(2, 1, 1) == 23);
  for (int n = 1; n <= 4; ++n)
    for (int nu = 1; nu <= 4; ++nu)
      for (int nv = 1; nv <= 4; ++nv) {
        const XiLayout l(n, nu, nv);
        const int formula = 3 * n * (n + 1) / 2 + 2 * nu * n + 2 * nv * n + nu * (nu + 1) + nv * (nv + 1) +
                            2 * nu * nv;
        CHECK(l.g == formula);
        CHECK(unknown_count(n, nu, nv) == formula);
      }
}

TEST_CASE("pack and unpack are inverse") {
  const MeanFieldJumpModel m = rl_example();
  RlGains g = RlGains::zeros(m.dims);
  g.L = Matrix::Constant(1, 2, -0.4);
  Matrix P(2, 2), Q(2, 2);
  P << 1.5, 0.2, 0.2, 0.7;
  Q << 0.9, -0.1, -0.1, 1.1;
  XiBlocks b = model_blocks(m, P, Q, g);
  b.P_next = P;
  b.Q_next = Q;
  b.Q_now = 2 * Q;
  const Vector xi = pack(b);
  const XiLayout l(2, 1, 1);
  REQUIRE(xi.size() == l.g);
  CHECK((pack(unpack(xi, l)) - xi).cwiseAbs().maxCoeff() == 0.0);
}

// ---------------------------------------------------------------------------
// Policy evaluation and improvement

TEST_CASE("pe_oracle with zero gains and zero output weight is zero") {
  MeanFieldJumpModel m = rl_example();
  m.M = Matrix::Zero(2, 2);
  const auto grid = make_grid(1.0, 0.25);
  const EvaluatedPolicy ev = pe_oracle(m, uniform_gains(grid, RlGains::zeros(m.dims)), 5.0);
  for (std::size_t k = 0; k < ev.P.size(); ++k) {
    CHECK(ev.P[k].cwiseAbs().maxCoeff() == 0.0);
    CHECK(ev.Q[k].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("pe_oracle integrates a pure source") {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 1.0);
  m.M = Matrix::Identity(2, 2);
  const auto grid = make_grid(1.0, 0.25);
  const EvaluatedPolicy ev = pe_oracle(m, uniform_gains(grid, RlGains::zeros(m.dims)), 5.0);
  for (std::size_t k = 0; k < ev.P.size(); ++k) {
    const Matrix expect = (1.0 - ev.grid[k]) * Matrix::Identity(2, 2);
    CHECK((ev.P[k] - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ev.Q[k] - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("pe_oracle scalar closed loop with zero drift") {
  const MeanFieldJumpModel m = scalar_model();
  RlGains g = RlGains::zeros(m.dims);
  g.L = mat1(-1.0);
  const auto grid = make_grid(1.0, 0.1);
  const EvaluatedPolicy ev = pe_oracle(m, uniform_gains(grid, g), 1.0);
  for (std::size_t k = 0; k < ev.P.size(); ++k) CHECK(ev.P[k](0, 0) == doctest::Approx(2.0 * (1.0 - ev.grid[k])));
  CHECK(ev.P_at(3, 0.5)(0, 0) == doctest::Approx(2.0 * (1.0 - 0.35)));
}

TEST_CASE("pe_oracle refuses jump models") {
  const MeanFieldJumpModel m = portfolio_example();
  const auto grid = make_grid(m.T, m.T / 2);
  CHECK_THROWS_AS(pe_oracle(m, uniform_gains(grid, RlGains::zeros(m.dims)), 5.0), InvalidArgument);
}

TEST_CASE("improve with zero value matrices gives zero gains") {
  const MeanFieldJumpModel m = rl_example();
  RlGains prev = RlGains::zeros(m.dims);
  prev.L = Matrix::Constant(1, 2, 0.3);
  const Matrix Z = Matrix::Zero(2, 2);
  const RlGains g = improve(m, Z, Z, prev, 5.0, ImproveWhich::both);
  CHECK(g.L.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.Ltilde.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.F.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.Ftilde.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("improve scalar control gain") {
  const MeanFieldJumpModel m = scalar_model();
  const RlGains g = improve(m, mat1(1.0), mat1(0.0), RlGains::zeros(m.dims), 5.0, ImproveWhich::control);
  CHECK(g.L(0, 0) == doctest::Approx(-1.0));
}

TEST_CASE("improve from model blocks equals improve from the model") {
  MeanFieldJumpModel m = rl_example();
  m.D1 << 0.1, -0.05;
  m.D1bar << 0.05, 0.0;
  RlGains prev = RlGains::zeros(m.dims);
  prev.L << -0.5, -0.8;
  prev.Ltilde << -0.9, -1.0;
  prev.F << 0.05, 0.02;
  prev.Ftilde << 0.1, 0.03;
  Matrix P(2, 2), Q(2, 2);
  P << 1.3, 0.2, 0.2, 0.8;
  Q << 1.7, 0.4, 0.4, 1.1;
  const XiBlocks b = model_blocks(m, P, Q, prev);
  for (ImproveWhich w : {ImproveWhich::control, ImproveWhich::disturbance}) {
    const RlGains a = improve(b, prev, 5.0, w);
    const RlGains c = improve(m, P, Q, prev, 5.0, w);
    CHECK((a.L - c.L).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.Ltilde - c.Ltilde).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.F - c.F).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((a.Ftilde - c.Ftilde).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("improve reports a disturbance bracket that is not positive definite") {
  MeanFieldJumpModel m = rl_example();
  m.D1 << 1.0, 0.0;
  Matrix P = 10.0 * Matrix::Identity(2, 2);
  CHECK_THROWS_AS(improve(m, P, P, RlGains::zeros(m.dims), 1.0, ImproveWhich::disturbance), SingularImprovement);
}

// ---------------------------------------------------------------------------
// Data collection

TEST_CASE("single deterministic path has zero deviation moments") {
  const MeanFieldJumpModel m = rl_example();
  MeanFieldJumpModel det = m;
  det.C.setZero();
  det.Cbar.setZero();
  det.D2.setZero();
  det.D2bar.setZero();
  const ParticlePlant plant(det, 1);
  const auto ex = make_exploration(3, 1, 1, 1, 0.5);
  const RlGains g = initial_gains(m, make_grid(1.0, 0.1)).gains.front();
  const IntervalMoments mo = plant.run(0.0, 0.1, 20, vec2(1.0, -0.5), g, ex.front(), 9);
  CHECK(mo.S_dev.cwiseAbs().maxCoeff() == 0.0);
  CHECK(mo.cov_end.cwiseAbs().maxCoeff() == 0.0);

  // The same interval through the exact plant: the common part of the
  // signal moves the mean identically up to the Euler step error.
  ExplorationPair common_only = ex.front();
  common_only.u.per_particle.clear();
  common_only.v.per_particle.clear();
  const IntervalMoments a = plant.run(0.0, 0.1, 200, vec2(1.0, -0.5), g, common_only, 9);
  const IntervalMoments b = MomentPlant(det).run(0.0, 0.1, 200, vec2(1.0, -0.5), g, common_only, 9);
  CHECK((a.mean_end - b.mean_end).cwiseAbs().maxCoeff() < 2e-3);
  CHECK((a.S_mean - b.S_mean).cwiseAbs().maxCoeff() < 2e-3);
  CHECK(b.S_dev.cwiseAbs().maxCoeff() < 1e-14);
}

namespace {

// Scalar model with unit control diffusion and the control held at 1 by a
// constant common sinusoid (ω = 0, phase π/2): x is a Brownian motion.
struct BrownianSetup {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({1, 1, 1}, 1, 1.0);
  ExplorationPair ex;
  BrownianSetup() {
    m.D2 = mat1(1.0);
    ex.u.common = {{Sinusoid{1.0, 0.0, std::numbers::pi / 2}}};
    ex.v.common = {{}};
  }
};

}  // namespace

TEST_CASE("constant processes integrate exactly") {
  BrownianSetup s;
  s.m.D2.setZero();
  const double h = 0.3;
  const MomentPlant exact(s.m);
  const ParticlePlant sampled(s.m, 4);
  for (const Plant* p : {static_cast<const Plant*>(&exact), static_cast<const Plant*>(&sampled)}) {
    const IntervalMoments mo = p->run(0.2, 0.2 + h, 7, Vector::Constant(1, 2.0), RlGains::zeros(s.m.dims), s.ex, 1);
    // w̄ = (Ex, Eu, Ev) = (2, 1, 0) throughout.
    CHECK(mo.S_mean(0, 0) == doctest::Approx(4.0 * h).epsilon(1e-12));
    CHECK(mo.S_mean(0, 1) == doctest::Approx(2.0 * h).epsilon(1e-12));
    CHECK(mo.S_mean(1, 1) == doctest::Approx(h).epsilon(1e-12));
    CHECK(mo.S_mean(2, 2) == 0.0);
  }
}

TEST_CASE("Brownian deviation integral matches the Ito isometry") {
  BrownianSetup s;
  const double h = 0.5;
  const long paths = 10000;
  const IntervalMoments mo =
      ParticlePlant(s.m, paths).run(0.0, h, 50, Vector::Zero(1), RlGains::zeros(s.m.dims), s.ex, 21);
  const double se = h * h / std::sqrt(3.0 * paths);
  CHECK(std::abs(mo.S_dev(0, 0) - h * h / 2) < 3 * se);
  const IntervalMoments exact =
      MomentPlant(s.m).run(0.0, h, 50, Vector::Zero(1), RlGains::zeros(s.m.dims), s.ex, 21);
  CHECK(exact.S_dev(0, 0) == doctest::Approx(h * h / 2).epsilon(1e-12));
  CHECK(exact.cov_end(0, 0) == doctest::Approx(h).epsilon(1e-12));
}

TEST_CASE("particle moments approach the exact moments") {
  const MeanFieldJumpModel m = rl_example();
  const RlGains g = initial_gains(m, make_grid(1.0, 0.1)).gains.front();
  const auto ex = make_exploration(5, 1, 1, 1, 1.0);
  const IntervalMoments exact = MomentPlant(m).run(0.0, 0.1, 20, vec2(0.5, -1.0), g, ex.front(), 3);
  const IntervalMoments sampled = ParticlePlant(m, 20000).run(0.0, 0.1, 20, vec2(0.5, -1.0), g, ex.front(), 3);
  const double scale = exact.S_dev.cwiseAbs().maxCoeff();
  CHECK((sampled.S_dev - exact.S_dev).cwiseAbs().maxCoeff() < 0.1 * scale);
  CHECK((sampled.mean_end - exact.mean_end).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("collect chains intervals from the previous mean and is deterministic") {
  const MeanFieldJumpModel m = rl_example();
  const auto grid = make_grid(1.0, 0.25);
  const PiecewiseGains beh = initial_gains(m, grid);
  const auto ex = make_exploration(1, 3, 1, 1, 1.0);
  const auto x0 = make_initial_states(2, 3, 2);
  const ParticlePlant plant(m, 200);
  const DataSet a = collect(plant, beh, ex, x0, 10, 4);
  const DataSet b = collect(plant, beh, ex, x0, 10, 4);
  REQUIRE(a.moments.size() == 4);
  REQUIRE(a.states() == 3);
  CHECK(a.paths == 200);
  for (std::size_t q = 0; q < 3; ++q) {
    CHECK(a.moments[0][q].x_start == x0[q]);
    for (std::size_t i = 1; i < 4; ++i) CHECK(a.moments[i][q].x_start == a.moments[i - 1][q].mean_end);
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.moments[i][q].S_dev == b.moments[i][q].S_dev);
  }
}

// ---------------------------------------------------------------------------
// Regression

TEST_CASE("regression has 23 columns and rejects degenerate data") {
  const MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 1.0);
  const auto grid = make_grid(1.0, 0.5);
  const PiecewiseGains beh = uniform_gains(grid, RlGains::zeros(m.dims));
  std::vector<ExplorationPair> ex(30);
  for (auto& e : ex) {
    e.u.common = {{}};
    e.v.common = {{}};
  }
  const std::vector<Vector> x0(30, Vector::Zero(2));
  const DataSet data = collect(MomentPlant(m), beh, ex, x0, 10, 1);
  try {
    assemble(data, beh.gains[0], Matrix::Identity(2, 2), 5.0, 0);
    FAIL("expected RankDeficient");
  } catch (const RankDeficient& e) {
    CHECK(e.rank() == 0);
    CHECK(e.needed() == 23);
  }
}

TEST_CASE("regression identity is exact for a stationary value pair") {
  const MeanFieldJumpModel m = rl_example();
  const double gamma = 5.0;
  const auto grid = make_grid(1.0, 0.1);
  const RlGains g = initial_gains(m, grid).gains[3];
  const StationaryPair sp = stationary_pair(m, g, gamma);
  const Vector xi = stationary_xi(m, sp, g);
  const auto ex = make_exploration(1, 30, 1, 1, 1.0);
  const auto x0 = make_initial_states(2, 30, 2);
  const DataSet data = collect(MomentPlant(m), uniform_gains(grid, g), ex, x0, 80, 3);
  for (std::size_t i : {std::size_t(0), std::size_t(5)}) {
    const RegressionBatch b = assemble(data, g, sp.MtM, gamma, i);
    CHECK(b.Phi.cols() == 23);
    CHECK(b.rank == 23);
    CHECK(rel_residual(b, xi) < 1e-7);
    const XiBlocks rec = unpack(solve_interval(b), XiLayout(2, 1, 1));
    CHECK((svec(rec.P_next) - svec(sp.P)).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((svec(rec.Q_next) - svec(sp.Q)).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("regression residual for the time-varying value pair shrinks with the interval") {
  const MeanFieldJumpModel m = rl_example();
  const double gamma = 5.0;
  const Matrix MtM = m.M.transpose() * m.M;
  const auto ex = make_exploration(1, 30, 1, 1, 1.0);
  const auto x0 = make_initial_states(2, 30, 2);
  double previous = std::numeric_limits<double>::infinity();
  for (int N : {10, 20, 40}) {
    const auto grid = make_grid(1.0, 1.0 / N);
    const PiecewiseGains init = initial_gains(m, grid);
    const DataSet data = collect(MomentPlant(m), init, ex, x0, 20, 3);
    const EvaluatedPolicy ev = pe_oracle(m, init, gamma, 20);
    double worst = 0.0;
    for (std::size_t i = 0; i < init.intervals(); ++i) {
      XiBlocks xb = model_blocks(m, ev.P_at(i, 0.5), ev.Q_at(i, 0.5), init.gains[i]);
      xb.P_next = ev.P_at(i, 1.0);
      xb.Q_next = ev.Q_at(i, 1.0);
      xb.Q_now = ev.Q_at(i, 0.0);
      worst = std::max(worst, rel_residual(assemble(data, init.gains[i], MtM, gamma, i), pack(xb)));
    }
    MESSAGE("N = " << N << " worst relative residual " << worst);
    CHECK(worst * 2.0 <= previous);
    previous = worst;
  }
}

TEST_CASE("solve_interval on an orthogonal system") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  Matrix R(23, 23);
  for (int i = 0; i < R.size(); ++i) R(i) = nd(rng);
  const Matrix Qm = Eigen::HouseholderQR<Matrix>(R).householderQ();
  RegressionBatch b;
  b.Phi = Qm;
  b.Theta = Qm.col(0);
  for (LeastSquares method : {LeastSquares::orthogonal, LeastSquares::normal_equations}) {
    const Vector xi = solve_interval(b, method);
    CHECK((xi - Vector::Unit(23, 0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("duplicated rows leave the least-squares solution unchanged") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  RegressionBatch b;
  b.Phi.resize(30, 23);
  b.Theta.resize(30);
  for (int i = 0; i < b.Phi.size(); ++i) b.Phi(i) = nd(rng);
  for (int i = 0; i < 30; ++i) b.Theta(i) = nd(rng);
  RegressionBatch d;
  d.Phi.resize(60, 23);
  d.Phi << b.Phi, b.Phi;
  d.Theta.resize(60);
  d.Theta << b.Theta, b.Theta;
  CHECK((solve_interval(b) - solve_interval(d)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("solve_interval rejects rank-deficient batches") {
  RegressionBatch b;
  b.Phi = Matrix::Zero(30, 23);
  b.Phi.col(0).setOnes();
  b.Theta = Vector::Ones(30);
  CHECK_THROWS_AS(solve_interval(b), RankDeficient);
}

// ---------------------------------------------------------------------------
// Algorithm 1

TEST_CASE("infinite tolerances stop after one inner and one outer pass") {
  const MeanFieldJumpModel m = rl_example();
  const auto grid = make_grid(1.0, 0.25);
  const PiecewiseGains init = initial_gains(m, grid);
  const DataSet data = collect(MomentPlant(m), init, make_exploration(1, 30, 1, 1, 1.0),
                               make_initial_states(2, 30, 2), 10, 3);
  AlgorithmSettings st;
  st.eps = st.eps1 = std::numeric_limits<double>::infinity();
  const AlgorithmResult r = run_algorithm1(data, init, m.M.transpose() * m.M, st);
  CHECK(r.report.outer_iterations == 1);
  REQUIRE(r.report.inner_iterations.size() == 1);
  CHECK(r.report.inner_iterations[0] == 1);
  CHECK(r.report.converged);
  CHECK(r.report.condition.size() == 4);

  const AlgorithmResult mb = run_model_based(m, init, st);
  CHECK(mb.report.outer_iterations == 1);
}

TEST_CASE("model-based policy iteration approaches the finite-horizon saddle gains") {
  const MeanFieldJumpModel m = rl_example();
  AlgorithmSettings st;
  st.gamma = 5.0;
  st.eps = st.eps1 = 1e-10;
  st.max_inner = st.max_outer = 100;
  double previous = std::numeric_limits<double>::infinity();
  for (int N : {10, 20, 40}) {
    const auto grid = make_grid(1.0, 1.0 / N);
    const PiecewiseGains ref = reference_gains(m, st.gamma, grid, 1.0 / N / 20);
    const AlgorithmResult r = run_model_based(m, initial_gains(m, grid), st);
    const double gap = gain_gap(r.gains, ref);
    MESSAGE("N = " << N << " gap " << gap);
    CHECK(gap < 1e-3);
    CHECK(gap * 3.0 < previous);
    previous = gap;
  }
}

TEST_CASE("oracle-data algorithm 1 settles on the stationary saddle gains") {
  // Each interval is identified on its own with constant unknowns, so the
  // terminal condition never enters and the fit lands on the long-horizon
  // solution of the same game.
  const MeanFieldJumpModel m = rl_example();
  const double gamma = 5.0;
  const auto grid = make_grid(1.0, 0.1);
  const PiecewiseGains init = initial_gains(m, grid);
  const DataSet data = collect(MomentPlant(m), init, make_exploration(1, 30, 1, 1, 1.0),
                               make_initial_states(2, 30, 2), 20, 3);
  AlgorithmSettings st;
  st.gamma = gamma;
  st.eps = st.eps1 = 1e-6;
  st.max_inner = st.max_outer = 100;
  const AlgorithmResult r = run_algorithm1(data, init, m.M.transpose() * m.M, st);
  CHECK(r.report.converged);
  CHECK(r.report.interval_mismatch < 1e-4);
  CHECK(gains_vs(r.gains, long_horizon_gains(m, gamma)) < 1e-3);

  st.method = LeastSquares::normal_equations;
  const AlgorithmResult n = run_algorithm1(data, init, m.M.transpose() * m.M, st);
  CHECK(gain_gap(n.gains, r.gains) < 1e-4);
}

TEST_CASE("large gamma drives the disturbance gains to zero") {
  const MeanFieldJumpModel m = rl_example();
  const auto grid = make_grid(1.0, 0.1);
  const PiecewiseGains init = initial_gains(m, grid);
  const DataSet data = collect(MomentPlant(m), init, make_exploration(1, 30, 1, 1, 1.0),
                               make_initial_states(2, 30, 2), 20, 3);
  AlgorithmSettings st;
  st.gamma = 1e6;
  st.eps = st.eps1 = 1e-6;
  st.max_inner = st.max_outer = 100;
  const AlgorithmResult r = run_algorithm1(data, init, m.M.transpose() * m.M, st);
  for (const RlGains& g : r.gains.gains) {
    CHECK(g.F.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(g.Ftilde.cwiseAbs().maxCoeff() < 1e-8);
  }
  CHECK(gains_vs(r.gains, long_horizon_gains(m, 1e6)) < 1e-3);
}
