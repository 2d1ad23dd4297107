#include "mfh/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfh/csv.hpp"
#include "mfh/integrator.hpp"

namespace mfh {

RiccatiState RiccatiState::zeros(int n) {
  const Matrix z = Matrix::Zero(n, n);
  return {z, z, z, z};
}

RiccatiState operator+(const RiccatiState& a, const RiccatiState& b) {
  return {a.P1 + b.P1, a.Q1 + b.Q1, a.P2 + b.P2, a.Q2 + b.Q2};
}
RiccatiState operator-(const RiccatiState& a, const RiccatiState& b) {
  return {a.P1 - b.P1, a.Q1 - b.Q1, a.P2 - b.P2, a.Q2 - b.Q2};
}
RiccatiState operator*(double c, const RiccatiState& a) {
  return {c * a.P1, c * a.Q1, c * a.P2, c * a.Q2};
}

double SigmaBundle::min() const { return *std::min_element(min_eig.begin(), min_eig.end()); }

namespace {

double min_eig(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

RiccatiState symmetrized(const RiccatiState& s) {
  return {symmetrize(s.P1), symmetrize(s.Q1), symmetrize(s.P2), symmetrize(s.Q2)};
}

bool all_finite(const RiccatiState& s) {
  return s.P1.allFinite() && s.Q1.allFinite() && s.P2.allFinite() && s.Q2.allFinite();
}

// Σ_i w_i l_i' P r_i over the jump atoms, with selectors given as member
// sums so both deviation and mean coefficients can be expressed.
template <class L, class R>
Matrix jsum(const MeanFieldJumpModel& m, const Matrix& P, L&& l, R&& r, Eigen::Index rows,
            Eigen::Index cols) {
  return jump_integral<JumpAtom>(std::span<const JumpAtom>(m.jump_atoms), P, l, r, rows, cols);
}

struct Loop {
  Matrix A, C;
  std::vector<Matrix> E;
};

Loop deviation_loop(const MeanFieldJumpModel& m, const Matrix& K1, const Matrix& K2) {
  Loop l{m.A + m.B2 * K2 + m.B1 * K1, m.C + m.D2 * K2 + m.D1 * K1, {}};
  for (const JumpAtom& a : m.jump_atoms) l.E.push_back(a.E + a.F2 * K2 + a.F1 * K1);
  return l;
}

Loop mean_loop(const MeanFieldJumpModel& m, const Matrix& S1, const Matrix& S2) {
  Loop l{m.A + m.Abar + (m.B2 + m.B2bar) * S2 + (m.B1 + m.B1bar) * S1,
         m.C + m.Cbar + (m.D2 + m.D2bar) * S2 + (m.D1 + m.D1bar) * S1,
         {}};
  for (const JumpAtom& a : m.jump_atoms)
    l.E.push_back(a.E + a.Ebar + (a.F2 + a.F2bar) * S2 + (a.F1 + a.F1bar) * S1);
  return l;
}

// X Ã + Ã'X + C̃'P C̃ + Σ w Ẽ'P Ẽ
Matrix lyap(const MeanFieldJumpModel& m, const Matrix& X, const Matrix& P, const Loop& l) {
  Matrix out = X * l.A + l.A.transpose() * X + l.C.transpose() * P * l.C;
  for (std::size_t i = 0; i < m.jump_atoms.size(); ++i)
    out += m.jump_atoms[i].weight * (l.E[i].transpose() * P * l.E[i]);
  return symmetrize(out);
}

Matrix solve_coupled(const Matrix& a1, const Matrix& b1, const Matrix& a2, const Matrix& b2,
                     Matrix& K1, const char* which) {
  const Eigen::Index nu = b2.rows();
  const Matrix sys = Matrix::Identity(nu, nu) - b2 * b1;
  Eigen::FullPivLU<Matrix> lu(sys);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw CouplingSingular(std::string("gain coupling singular: ") + which);
  const Matrix K2 = lu.solve(a2 + b2 * a1);
  K1 = a1 + b1 * K2;
  return K2;
}

}  // namespace

SigmaBundle sigma_bundle(const MeanFieldJumpModel& m, double gamma, const RiccatiState& s) {
  const auto [n, nu, nv] = m.dims;
  (void)n;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  SigmaBundle b;
  b.sigma0 = gamma * gamma * Matrix::Identity(nv, nv) + m.D1.transpose() * s.P1 * m.D1 +
             jsum(m, s.P1, [](const JumpAtom& a) { return a.F1; },
                  [](const JumpAtom& a) { return a.F1; }, nv, nv);
  b.sigma2 = gamma * gamma * Matrix::Identity(nv, nv) + D1s.transpose() * s.P1 * D1s +
             jsum(m, s.P1, [](const JumpAtom& a) -> Matrix { return a.F1 + a.F1bar; },
                  [](const JumpAtom& a) -> Matrix { return a.F1 + a.F1bar; }, nv, nv);
  b.tsigma0 = Matrix::Identity(nu, nu) + m.D2.transpose() * s.P2 * m.D2 +
              jsum(m, s.P2, [](const JumpAtom& a) { return a.F2; },
                   [](const JumpAtom& a) { return a.F2; }, nu, nu);
  b.tsigma2 = Matrix::Identity(nu, nu) + D2s.transpose() * s.P2 * D2s +
              jsum(m, s.P2, [](const JumpAtom& a) -> Matrix { return a.F2 + a.F2bar; },
                   [](const JumpAtom& a) -> Matrix { return a.F2 + a.F2bar; }, nu, nu);
  b.sigma0 = symmetrize(b.sigma0);
  b.sigma2 = symmetrize(b.sigma2);
  b.tsigma0 = symmetrize(b.tsigma0);
  b.tsigma2 = symmetrize(b.tsigma2);
  b.min_eig = {min_eig(b.sigma0), min_eig(b.sigma2), min_eig(b.tsigma0), min_eig(b.tsigma2)};
  return b;
}

GainEvaluation gains_from(const MeanFieldJumpModel& m, double gamma, const RiccatiState& s) {
  if (!(gamma > 0.0)) throw InvalidArgument("gains_from: gamma must be positive");
  const auto [n, nu, nv] = m.dims;
  GainEvaluation out;
  out.sigma = sigma_bundle(m, gamma, s);
  for (std::size_t i = 0; i < 4; ++i)
    if (!(out.sigma.min_eig[i] > kSigmaThreshold))
      throw SigmaNotPositive(SigmaBundle::names[i], out.sigma.min_eig[i]);

  const auto E = [](const JumpAtom& a) { return a.E; };
  const auto F1 = [](const JumpAtom& a) { return a.F1; };
  const auto F2 = [](const JumpAtom& a) { return a.F2; };
  const auto Es = [](const JumpAtom& a) -> Matrix { return a.E + a.Ebar; };
  const auto F1s = [](const JumpAtom& a) -> Matrix { return a.F1 + a.F1bar; };
  const auto F2s = [](const JumpAtom& a) -> Matrix { return a.F2 + a.F2bar; };

  const Matrix& P1 = s.P1;
  const Matrix& P2 = s.P2;
  const auto ldlt0 = out.sigma.sigma0.ldlt();
  const auto ldlt2 = out.sigma.sigma2.ldlt();
  const auto tldlt0 = out.sigma.tsigma0.ldlt();
  const auto tldlt2 = out.sigma.tsigma2.ldlt();

  // Deviation gains: K1 = a1 + b1 K2, K2 = a2 + b2 K1.
  const Matrix a1 = -ldlt0.solve(Matrix(m.B1.transpose() * P1 + m.D1.transpose() * P1 * m.C +
                                        jsum(m, P1, F1, E, nv, n)));
  const Matrix b1 =
      -ldlt0.solve(Matrix(m.D1.transpose() * P1 * m.D2 + jsum(m, P1, F1, F2, nv, nu)));
  const Matrix a2 = -tldlt0.solve(Matrix(m.B2.transpose() * P2 + m.D2.transpose() * P2 * m.C +
                                         jsum(m, P2, F2, E, nu, n)));
  const Matrix b2 =
      -tldlt0.solve(Matrix(m.D2.transpose() * P2 * m.D1 + jsum(m, P2, F2, F1, nu, nv)));
  Matrix K1;
  const Matrix K2 = solve_coupled(a1, b1, a2, b2, K1, "deviation");

  // Mean gains, same structure with the barred sums and Q.
  const Matrix As = m.A + m.Abar, Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  (void)As;
  const Matrix ta1 = -ldlt2.solve(Matrix(B1s.transpose() * s.Q1 + D1s.transpose() * P1 * Cs +
                                         jsum(m, P1, F1s, Es, nv, n)));
  const Matrix tb1 = -ldlt2.solve(Matrix(D1s.transpose() * P1 * D2s + jsum(m, P1, F1s, F2s, nv, nu)));
  const Matrix ta2 = -tldlt2.solve(Matrix(B2s.transpose() * s.Q2 + D2s.transpose() * P2 * Cs +
                                          jsum(m, P2, F2s, Es, nu, n)));
  const Matrix tb2 =
      -tldlt2.solve(Matrix(D2s.transpose() * P2 * D1s + jsum(m, P2, F2s, F1s, nu, nv)));
  Matrix S1;
  const Matrix S2 = solve_coupled(ta1, tb1, ta2, tb2, S1, "mean");

  out.gains = {K1, S1, K2, S2};
  return out;
}

RiccatiState gdre_rhs(const MeanFieldJumpModel& m, double gamma, const RiccatiState& s) {
  const auto [n, nu, nv] = m.dims;
  const GainEvaluation ge = gains_from(m, gamma, s);
  const GainTuple& g = ge.gains;
  const Matrix MtM = m.M.transpose() * m.M;
  const Matrix Z1 = Matrix::Zero(nv, n), Z2 = Matrix::Zero(nu, n);

  RiccatiState d;
  d.P1 = -lyap(m, s.P1, s.P1, deviation_loop(m, Z1, g.K2)) + MtM + g.K2.transpose() * g.K2 +
         g.K1.transpose() * ge.sigma.sigma0 * g.K1;
  d.Q1 = -lyap(m, s.Q1, s.P1, mean_loop(m, Z1, g.K2_sum)) + MtM +
         g.K2_sum.transpose() * g.K2_sum + g.K1_sum.transpose() * ge.sigma.sigma2 * g.K1_sum;
  d.P2 = -lyap(m, s.P2, s.P2, deviation_loop(m, g.K1, Z2)) - MtM +
         g.K2.transpose() * ge.sigma.tsigma0 * g.K2;
  d.Q2 = -lyap(m, s.Q2, s.P2, mean_loop(m, g.K1_sum, Z2)) - MtM +
         g.K2_sum.transpose() * ge.sigma.tsigma2 * g.K2_sum;
  return symmetrized(d);
}

RiccatiState gdre_rhs_frozen(const MeanFieldJumpModel& m, double gamma, const RiccatiState& s,
                             const GainTuple& g) {
  const Matrix MtM = m.M.transpose() * m.M;
  const double g2 = gamma * gamma;
  const Loop dev = deviation_loop(m, g.K1, g.K2);
  const Loop mean = mean_loop(m, g.K1_sum, g.K2_sum);
  RiccatiState d;
  d.P1 = -lyap(m, s.P1, s.P1, dev) + MtM + g.K2.transpose() * g.K2 - g2 * g.K1.transpose() * g.K1;
  d.Q1 = -lyap(m, s.Q1, s.P1, mean) + MtM + g.K2_sum.transpose() * g.K2_sum -
         g2 * g.K1_sum.transpose() * g.K1_sum;
  d.P2 = -lyap(m, s.P2, s.P2, dev) - MtM - g.K2.transpose() * g.K2;
  d.Q2 = -lyap(m, s.Q2, s.P2, mean) - MtM - g.K2_sum.transpose() * g.K2_sum;
  return symmetrized(d);
}

RiccatiTrajectory solve_gdre(const MeanFieldJumpModel& model, double gamma, double dt,
                             GdreMode mode) {
  require_valid(model);
  if (!(gamma > 0.0)) throw InvalidArgument("solve_gdre: gamma must be positive");
  const std::vector<double> grid = make_grid(model.T, dt);
  const std::size_t N = grid.size() - 1;

  RiccatiTrajectory traj;
  traj.gamma = gamma;
  std::vector<double> ts;
  std::vector<RiccatiState> states;
  std::vector<GainTuple> gains;
  std::vector<std::array<double, 4>> margins;

  RiccatiState y = RiccatiState::zeros(model.dims.n);
  bool ok = true;
  for (std::size_t k = N + 1; k-- > 0;) {
    const double t = grid[k];
    if (!all_finite(y)) {
      traj.failure = RiccatiFailure{t, "non-finite state", std::numeric_limits<double>::quiet_NaN()};
      ok = false;
      break;
    }
    const SigmaBundle sb = sigma_bundle(model, gamma, y);
    std::size_t bad = 4;
    for (std::size_t i = 0; i < 4; ++i)
      if (!(sb.min_eig[i] > kSigmaThreshold)) {
        bad = i;
        break;
      }
    if (bad < 4) {
      traj.failure = RiccatiFailure{t, SigmaBundle::names[bad], sb.min_eig[bad]};
      ok = false;
      break;
    }
    GainEvaluation ge;
    try {
      ge = gains_from(model, gamma, y);
    } catch (const CouplingSingular& e) {
      traj.failure = RiccatiFailure{t, "coupling", 0.0};
      ok = false;
      break;
    }
    ts.push_back(t);
    states.push_back(y);
    gains.push_back(ge.gains);
    margins.push_back(sb.min_eig);
    if (k == 0) break;

    const double h = grid[k] - grid[k - 1];
    try {
      if (mode == GdreMode::paper) {
        const GainTuple frozen = ge.gains;
        y = rk4_step_backward(t, h, y, [&](double, const RiccatiState& s) {
          return gdre_rhs_frozen(model, gamma, s, frozen);
        });
      } else {
        y = rk4_step_backward(t, h, y, [&](double, const RiccatiState& s) {
          return gdre_rhs(model, gamma, s);
        });
      }
    } catch (const SigmaNotPositive& e) {
      traj.failure = RiccatiFailure{grid[k - 1], e.which(), e.min_eig()};
      ok = false;
      break;
    } catch (const CouplingSingular&) {
      traj.failure = RiccatiFailure{grid[k - 1], "coupling", 0.0};
      ok = false;
      break;
    }
    y = symmetrized(y);
  }

  std::reverse(ts.begin(), ts.end());
  std::reverse(states.begin(), states.end());
  std::reverse(gains.begin(), gains.end());
  std::reverse(margins.begin(), margins.end());
  traj.grid = ts;
  traj.states = std::move(states);
  traj.sigma_margins = std::move(margins);
  for (std::size_t i = 0; i < ts.size(); ++i) traj.gains.push_back(ts[i], gains[i]);
  traj.feasible = ok;
  return traj;
}

// ---------------------------------------------------------------------------
// Bounded real lemma

namespace {

struct BrlParts {
  Matrix sigma0, sigma2;
  Matrix dP, dQ;
};

BrlParts brl_rhs(const DisturbanceOnlyModel& d, double gamma, const Matrix& P, const Matrix& Q) {
  const int nv = d.nv;
  const std::span<const DisturbanceAtom> atoms(d.jump_atoms);
  const auto E = [](const DisturbanceAtom& a) { return a.E; };
  const auto F = [](const DisturbanceAtom& a) { return a.F; };
  const auto Es = [](const DisturbanceAtom& a) -> Matrix { return a.E + a.Ebar; };
  const auto Fs = [](const DisturbanceAtom& a) -> Matrix { return a.F + a.Fbar; };
  const Eigen::Index n = d.n;

  const Matrix As = d.A + d.Abar, Cs = d.C + d.Cbar, Bs = d.B + d.Bbar, Ds = d.D + d.Dbar;
  const Matrix Ms = d.M + d.Mbar;

  BrlParts r;
  r.sigma0 = symmetrize(gamma * gamma * Matrix::Identity(nv, nv) + d.D.transpose() * P * d.D +
                        jump_integral(atoms, P, F, F, nv, nv));
  r.sigma2 = symmetrize(gamma * gamma * Matrix::Identity(nv, nv) + Ds.transpose() * P * Ds +
                        jump_integral(atoms, P, Fs, Fs, nv, nv));
  const Matrix G = P * d.B + d.C.transpose() * P * d.D + jump_integral(atoms, P, E, F, n, nv);
  const Matrix Gt = Q * Bs + Cs.transpose() * P * Ds + jump_integral(atoms, P, Es, Fs, n, nv);

  const double m0 = min_eig(r.sigma0), m2 = min_eig(r.sigma2);
  if (!(m0 > kSigmaThreshold)) throw SigmaNotPositive("Sigma0", m0);
  if (!(m2 > kSigmaThreshold)) throw SigmaNotPositive("Sigma2", m2);

  r.dP = -(P * d.A + d.A.transpose() * P + d.C.transpose() * P * d.C +
           jump_integral(atoms, P, E, E, n, n)) +
         d.M.transpose() * d.M + G * r.sigma0.ldlt().solve(Matrix(G.transpose()));
  r.dQ = -(Q * As + As.transpose() * Q + Cs.transpose() * P * Cs +
           jump_integral(atoms, P, Es, Es, n, n)) +
         Ms.transpose() * Ms + Gt * r.sigma2.ldlt().solve(Matrix(Gt.transpose()));
  r.dP = symmetrize(r.dP);
  r.dQ = symmetrize(r.dQ);
  return r;
}

}  // namespace

BrlSolution solve_brl(const DisturbanceModelFn& dmodel, double T, double gamma, double dt) {
  if (!(gamma > 0.0)) throw InvalidArgument("solve_brl: gamma must be positive");
  const std::vector<double> grid = make_grid(T, dt);
  const std::size_t N = grid.size() - 1;
  const int n = dmodel(T).n;

  // P and Q are stacked side by side; P's equation does not involve Q, so
  // the joint sweep gives the same P as integrating it alone.
  Matrix y = Matrix::Zero(n, 2 * n);
  const auto rhs = [&](double t, const Matrix& s) -> Matrix {
    const BrlParts r = brl_rhs(dmodel(t), gamma, s.leftCols(n), s.rightCols(n));
    Matrix out(n, 2 * n);
    out << r.dP, r.dQ;
    return out;
  };

  BrlSolution sol;
  std::vector<double> ts;
  std::vector<Matrix> Ps, Qs;
  std::vector<std::array<double, 2>> margins;
  bool ok = true;
  for (std::size_t k = N + 1; k-- > 0;) {
    const double t = grid[k];
    if (!y.allFinite()) {
      sol.failure_time = t;
      ok = false;
      break;
    }
    const Matrix P = y.leftCols(n), Q = y.rightCols(n);
    const DisturbanceOnlyModel d = dmodel(t);
    const Matrix Ds = d.D + d.Dbar;
    const auto F = [](const DisturbanceAtom& a) { return a.F; };
    const auto Fs = [](const DisturbanceAtom& a) -> Matrix { return a.F + a.Fbar; };
    const std::span<const DisturbanceAtom> atoms(d.jump_atoms);
    const double m0 = min_eig(gamma * gamma * Matrix::Identity(d.nv, d.nv) +
                              d.D.transpose() * P * d.D + jump_integral(atoms, P, F, F, d.nv, d.nv));
    const double m2 = min_eig(gamma * gamma * Matrix::Identity(d.nv, d.nv) +
                              Ds.transpose() * P * Ds + jump_integral(atoms, P, Fs, Fs, d.nv, d.nv));
    if (!(m0 > kSigmaThreshold) || !(m2 > kSigmaThreshold)) {
      sol.failure_time = t;
      ok = false;
      break;
    }
    ts.push_back(t);
    Ps.push_back(P);
    Qs.push_back(Q);
    margins.push_back({m0, m2});
    if (k == 0) break;
    try {
      y = rk4_step_backward(t, grid[k] - grid[k - 1], y, rhs);
    } catch (const SigmaNotPositive&) {
      sol.failure_time = grid[k - 1];
      ok = false;
      break;
    }
    y.leftCols(n) = symmetrize(y.leftCols(n));
    y.rightCols(n) = symmetrize(y.rightCols(n));
  }
  std::reverse(ts.begin(), ts.end());
  std::reverse(Ps.begin(), Ps.end());
  std::reverse(Qs.begin(), Qs.end());
  std::reverse(margins.begin(), margins.end());
  sol.grid = std::move(ts);
  sol.P = std::move(Ps);
  sol.Q = std::move(Qs);
  sol.margins = std::move(margins);
  sol.feasible = ok;
  return sol;
}

BrlSolution solve_brl(const DisturbanceOnlyModel& dmodel, double gamma, double dt) {
  return solve_brl([dmodel](double) { return dmodel; }, dmodel.T, gamma, dt);
}

// ---------------------------------------------------------------------------
// Lyapunov equation and Picard iteration

LyapunovSolution lyapunov_solve(const LyapunovFn& coeffs, const Matrix& terminal,
                                const std::vector<double>& grid) {
  if (grid.size() < 2) throw InvalidArgument("lyapunov_solve: grid needs two points");
  if (terminal.rows() != terminal.cols()) throw ShapeError("lyapunov_solve: terminal not square");
  const auto rhs = [&](double t, const Matrix& P) -> Matrix {
    const LyapunovCoefficients c = coeffs(t);
    Matrix out = P * c.A + c.A.transpose() * P + c.C.transpose() * P * c.C + c.source;
    for (const auto& [w, E] : c.jumps) out += w * (E.transpose() * P * E);
    return symmetrize(-out);
  };

  const std::size_t N = grid.size() - 1;
  LyapunovSolution sol;
  sol.grid = grid;
  sol.P.resize(N + 1);
  sol.dP.resize(N + 1);
  Matrix y = symmetrize(terminal);
  bool psd_data = min_eig(terminal) >= -1e-12;
  for (std::size_t k = N + 1; k-- > 0;) {
    sol.P[k] = y;
    sol.dP[k] = rhs(grid[k], y);
    if (psd_data && min_eig(coeffs(grid[k]).source) < -1e-12) psd_data = false;
    if (k == 0) break;
    y = symmetrize(rk4_step_backward(grid[k], grid[k] - grid[k - 1], y, rhs));
  }
  if (psd_data) {
    for (std::size_t k = 0; k <= N; ++k) {
      const double e = min_eig(sol.P[k]);
      if (e < -1e-9) throw PositivityViolation(grid[k], e);
    }
  }
  return sol;
}

namespace {

// Cubic Hermite interpolation of a grid function with known derivatives.
Matrix hermite(const LyapunovSolution& s, double t) {
  const auto& g = s.grid;
  if (t <= g.front()) return s.P.front();
  if (t >= g.back()) return s.P.back();
  const auto it = std::upper_bound(g.begin(), g.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - g.begin()) - 1;
  const double h = g[k + 1] - g[k];
  const double u = (t - g[k]) / h;
  const double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * s.P[k] + (u3 - 2 * u2 + u) * h * s.dP[k] +
         (-2 * u3 + 3 * u2) * s.P[k + 1] + (u3 - u2) * h * s.dP[k + 1];
}

}  // namespace

PicardResult picard_solve(const DisturbanceModelFn& dmodel, double T, double gamma, double dt,
                          double tol, int max_iter) {
  if (!(gamma > 0.0) || !(tol > 0.0) || max_iter < 1)
    throw InvalidArgument("picard_solve: gamma, tol and max_iter must be positive");
  const std::vector<double> grid = make_grid(T, dt);
  const int n = dmodel(T).n;

  LyapunovSolution prev;
  prev.grid = grid;
  prev.P.assign(grid.size(), Matrix::Zero(n, n));
  prev.dP.assign(grid.size(), Matrix::Zero(n, n));

  PicardResult res;
  res.grid = grid;
  for (int it = 1; it <= max_iter; ++it) {
    const auto coeffs = [&](double t) {
      const DisturbanceOnlyModel d = dmodel(t);
      const Matrix Ph = hermite(prev, t);
      const std::span<const DisturbanceAtom> atoms(d.jump_atoms);
      const auto E = [](const DisturbanceAtom& a) { return a.E; };
      const auto F = [](const DisturbanceAtom& a) { return a.F; };
      const Matrix sigma0 = symmetrize(gamma * gamma * Matrix::Identity(d.nv, d.nv) +
                                       d.D.transpose() * Ph * d.D +
                                       jump_integral(atoms, Ph, F, F, d.nv, d.nv));
      const double me = min_eig(sigma0);
      if (!(me > kSigmaThreshold))
        throw NoConvergence("picard_solve: Sigma0 lost positivity at t=" + std::to_string(t));
      const Matrix G = Ph * d.B + d.C.transpose() * Ph * d.D + jump_integral(atoms, Ph, E, F, d.n, d.nv);
      const Matrix phi = -sigma0.ldlt().solve(Matrix(G.transpose()));
      LyapunovCoefficients c;
      c.A = d.A + d.B * phi;
      c.C = d.C + d.D * phi;
      for (const DisturbanceAtom& a : d.jump_atoms) c.jumps.emplace_back(a.weight, a.E + a.F * phi);
      c.source = -d.M.transpose() * d.M + gamma * gamma * phi.transpose() * phi;
      return c;
    };
    LyapunovSolution next = lyapunov_solve(coeffs, Matrix::Zero(n, n), grid);
    double diff = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k)
      diff = std::max(diff, (next.P[k] - prev.P[k]).norm());
    res.history.push_back(next.P);
    res.iterations = it;
    if (!std::isfinite(diff))
      throw PicardNoConvergence("picard_solve: iterate became non-finite", next.P, prev.P);
    if (diff < tol) {
      res.P = next.P;
      return res;
    }
    if (it == max_iter)
      throw PicardNoConvergence("picard_solve: no convergence after " + std::to_string(max_iter) +
                                    " iterations",
                                next.P, prev.P);
    prev = std::move(next);
  }
  throw NoConvergence("picard_solve: unreachable");
}

PicardResult picard_solve(const DisturbanceOnlyModel& dmodel, double gamma, double dt, double tol,
                          int max_iter) {
  return picard_solve([dmodel](double) { return dmodel; }, dmodel.T, gamma, dt, tol, max_iter);
}

// ---------------------------------------------------------------------------

GammaSearch gamma_threshold(const MeanFieldJumpModel& model, double lo, double hi, double tol,
                            double dt, GdreMode mode) {
  if (!(lo > 0.0) || !(hi > lo) || !(tol > 0.0))
    throw BadBracket("gamma_threshold: need 0 < lo < hi and tol > 0");
  GammaSearch r;
  const auto probe = [&](double g) {
    const bool f = solve_gdre(model, g, dt, mode).feasible;
    r.probes.emplace_back(g, f);
    return f;
  };
  if (probe(lo)) throw BadBracket("gamma_threshold: lower end " + std::to_string(lo) + " is feasible");
  if (!probe(hi)) throw BadBracket("gamma_threshold: upper end " + std::to_string(hi) + " is infeasible");
  while (hi - lo >= tol) {
    const double mid = 0.5 * (lo + hi);
    if (probe(mid))
      hi = mid;
    else
      lo = mid;
  }
  r.lo = lo;
  r.hi = hi;
  r.gamma_star = 0.5 * (lo + hi);
  for (const auto& [g, f] : r.probes)
    if ((g > r.gamma_star && !f) || (g < r.gamma_star && f)) r.monotone = false;
  return r;
}

std::pair<double, double> value_at(const RiccatiTrajectory& traj, const Vector& mean,
                                   const Matrix& cov) {
  if (!traj.feasible || traj.states.empty() || traj.grid.front() != 0.0)
    throw InvalidArgument("value_at: trajectory is not feasible on [0, T]");
  const RiccatiState& s = traj.states.front();
  if (mean.size() != s.P1.rows() || cov.rows() != s.P1.rows() || cov.cols() != s.P1.rows())
    throw ShapeError("value_at: initial moments have the wrong shape");
  const double j1 = (s.P1 * cov).trace() + mean.dot(s.Q1 * mean);
  const double j2 = (s.P2 * cov).trace() + mean.dot(s.Q2 * mean);
  return {j1, j2};
}

// ---------------------------------------------------------------------------
// Zero-sum pair for the jump-free system

ZeroSumGains zero_sum_gains(const MeanFieldJumpModel& m, double gamma, const Matrix& P,
                            const Matrix& Q) {
  const auto [n, nu, nv] = m.dims;
  (void)n;
  const Matrix Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  const double g2 = gamma * gamma;
  const Matrix R1 = g2 * Matrix::Identity(nv, nv) - m.D1.transpose() * P * m.D1;
  const Matrix R1s = g2 * Matrix::Identity(nv, nv) - D1s.transpose() * P * D1s;
  const Matrix R2 = Matrix::Identity(nu, nu) + m.D2.transpose() * P * m.D2;
  const Matrix R2s = Matrix::Identity(nu, nu) + D2s.transpose() * P * D2s;
  const Matrix G1 = P * m.B1 + m.C.transpose() * P * m.D1;
  const Matrix G2 = P * m.B2 + m.C.transpose() * P * m.D2;
  const Matrix G1s = Q * B1s + Cs.transpose() * P * D1s;
  const Matrix G2s = Q * B2s + Cs.transpose() * P * D2s;
  ZeroSumGains g;
  g.L = -R2.ldlt().solve(Matrix(G2.transpose()));
  g.F = R1.ldlt().solve(Matrix(G1.transpose()));
  g.Ltilde = -R2s.ldlt().solve(Matrix(G2s.transpose()));
  g.Ftilde = R1s.ldlt().solve(Matrix(G1s.transpose()));
  return g;
}

ZeroSumSolution solve_zero_sum(const MeanFieldJumpModel& m, double gamma, double dt) {
  require_valid(m);
  if (!m.jump_atoms.empty()) throw InvalidArgument("solve_zero_sum: model must have no jumps");
  const int n = m.dims.n, nv = m.dims.nv;
  const std::vector<double> grid = make_grid(m.T, dt);
  const Matrix As = m.A + m.Abar, Cs = m.C + m.Cbar;
  const Matrix D1s = m.D1 + m.D1bar;
  const Matrix MtM = m.M.transpose() * m.M;
  const double g2 = gamma * gamma;

  const auto rhs = [&](double, const Matrix& s) -> Matrix {
    const Matrix P = s.leftCols(n), Q = s.rightCols(n);
    const ZeroSumGains g = zero_sum_gains(m, gamma, P, Q);
    // With the saddle gains substituted the quadratic terms read
    // G1 R1^{-1} G1' = F'R1F and G2 R2^{-1} G2' = L'R2L.
    const Matrix R1 = g2 * Matrix::Identity(nv, nv) - m.D1.transpose() * P * m.D1;
    const Matrix R1s = g2 * Matrix::Identity(nv, nv) - D1s.transpose() * P * D1s;
    const Matrix R2 = Matrix::Identity(m.dims.nu, m.dims.nu) + m.D2.transpose() * P * m.D2;
    const Matrix D2s = m.D2 + m.D2bar;
    const Matrix R2s = Matrix::Identity(m.dims.nu, m.dims.nu) + D2s.transpose() * P * D2s;
    const Matrix dP = -(P * m.A + m.A.transpose() * P + m.C.transpose() * P * m.C + MtM +
                        g.F.transpose() * R1 * g.F - g.L.transpose() * R2 * g.L);
    const Matrix dQ = -(Q * As + As.transpose() * Q + Cs.transpose() * P * Cs + MtM +
                        g.Ftilde.transpose() * R1s * g.Ftilde -
                        g.Ltilde.transpose() * R2s * g.Ltilde);
    Matrix out(n, 2 * n);
    out << symmetrize(dP), symmetrize(dQ);
    return out;
  };

  ZeroSumSolution sol;
  const std::size_t N = grid.size() - 1;
  sol.grid = grid;
  sol.P.resize(N + 1);
  sol.Q.resize(N + 1);
  sol.gains.resize(N + 1);
  sol.feasible = true;
  Matrix y = Matrix::Zero(n, 2 * n);
  for (std::size_t k = N + 1; k-- > 0;) {
    sol.P[k] = y.leftCols(n);
    sol.Q[k] = y.rightCols(n);
    const Matrix R1 = g2 * Matrix::Identity(nv, nv) - m.D1.transpose() * sol.P[k] * m.D1;
    const Matrix R1s = g2 * Matrix::Identity(nv, nv) - D1s.transpose() * sol.P[k] * D1s;
    if (!y.allFinite() || !(min_eig(R1) > kSigmaThreshold) || !(min_eig(R1s) > kSigmaThreshold)) {
      sol.feasible = false;
      break;
    }
    sol.gains[k] = zero_sum_gains(m, gamma, sol.P[k], sol.Q[k]);
    if (k == 0) break;
    y = rk4_step_backward(grid[k], grid[k] - grid[k - 1], y, rhs);
    y.leftCols(n) = symmetrize(y.leftCols(n));
    y.rightCols(n) = symmetrize(y.rightCols(n));
  }
  return sol;
}

// ---------------------------------------------------------------------------

void write_trajectory_csv(const RiccatiTrajectory& traj, std::ostream& out) {
  if (traj.states.empty()) {
    write_csv_header(out, {"t"});
    return;
  }
  const Eigen::Index n = traj.states.front().P1.rows();
  std::vector<std::string> head{"t"};
  const auto add_matrix_names = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j)
        head.push_back(name + "_" + std::to_string(i + 1) + std::to_string(j + 1));
  };
  const GainTuple g0 = traj.gains[0];
  add_matrix_names("P1", n, n);
  add_matrix_names("Q1", n, n);
  add_matrix_names("P2", n, n);
  add_matrix_names("Q2", n, n);
  add_matrix_names("K1", g0.K1.rows(), n);
  add_matrix_names("K1pK1t", g0.K1_sum.rows(), n);
  add_matrix_names("K2", g0.K2.rows(), n);
  add_matrix_names("K2pK2t", g0.K2_sum.rows(), n);
  for (const char* s : {"sigma0_mineig", "sigma2_mineig", "sigmatilde0_mineig",
                        "sigmatilde2_mineig", "det_P1", "det_Q1", "det_P2", "det_Q2"})
    head.emplace_back(s);
  write_csv_header(out, head);

  const auto push = [](std::vector<double>& row, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
  };
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const RiccatiState& s = traj.states[k];
    const GainTuple g = traj.gains[k];
    std::vector<double> row{traj.grid[k]};
    push(row, s.P1);
    push(row, s.Q1);
    push(row, s.P2);
    push(row, s.Q2);
    push(row, g.K1);
    push(row, g.K1_sum);
    push(row, g.K2);
    push(row, g.K2_sum);
    for (double e : traj.sigma_margins[k]) row.push_back(e);
    row.push_back(s.P1.determinant());
    row.push_back(s.Q1.determinant());
    row.push_back(s.P2.determinant());
    row.push_back(s.Q2.determinant());
    write_csv_row(out, row);
  }
}

}  // namespace mfh
