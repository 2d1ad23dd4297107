#include "checks.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "mfh/riccati.hpp"
#include "mfh/rl.hpp"
#include "mfh/simulate.hpp"

namespace mfh::checks {
namespace {

double min_eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose())).eigenvalues().minCoeff();
}
double max_eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose())).eigenvalues().maxCoeff();
}

std::string sci(double x) {
  std::ostringstream s;
  s << std::setprecision(3) << std::scientific << x;
  return s.str();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [fails]");
  }
};

// --- 1, 2 -------------------------------------------------------------------

Verdict portfolio_signs() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const RiccatiTrajectory traj = solve_gdre(portfolio_example(), 5.0, 1e-3);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  v.require(traj.feasible, "feasible");
  if (!traj.feasible) return v;
  double sigma = std::numeric_limits<double>::infinity(), top1 = -sigma, low2 = sigma, strict = sigma;
  for (std::size_t k = 0; k < traj.grid.size(); ++k) {
    const RiccatiState& s = traj.states[k];
    for (double e : traj.sigma_margins[k]) sigma = std::min(sigma, e);
    top1 = std::max({top1, max_eig(s.P1), max_eig(s.Q1)});
    low2 = std::min({low2, min_eig(s.P2), min_eig(s.Q2)});
    if (traj.grid[k] <= 0.09 + 1e-12)
      strict = std::min({strict, -max_eig(s.P1), -max_eig(s.Q1), min_eig(s.P2), min_eig(s.Q2)});
  }
  v.require(sigma > 0.0, "min Sigma eig " + sci(sigma));
  v.require(top1 <= 1e-9, "max eig P1,Q1 " + sci(top1));
  v.require(low2 >= -1e-9, "min eig P2,Q2 " + sci(low2));
  v.require(strict > 1e-6, "min |eig| for t<=0.09 " + sci(strict));
  v.require(secs < 5.0, "solve " + sci(secs) + " s");
  return v;
}

Verdict determinant_signs() {
  Verdict v;
  const RiccatiTrajectory traj = solve_gdre(portfolio_example(), 5.0, 1e-3);
  v.require(traj.feasible, "feasible");
  if (!traj.feasible) return v;
  double low = std::numeric_limits<double>::infinity();
  for (const RiccatiState& s : traj.states)
    for (const Matrix* m : {&s.P1, &s.Q1, &s.P2, &s.Q2}) low = std::min(low, m->determinant());
  const RiccatiState& end = traj.states.back();
  double terminal = 0.0;
  for (const Matrix* m : {&end.P1, &end.Q1, &end.P2, &end.Q2}) terminal = std::max(terminal, std::abs(m->determinant()));
  v.require(low >= -1e-12, "min det " + sci(low));
  v.require(terminal == 0.0, "max |det| at T " + sci(terminal));
  return v;
}

// --- 3 ----------------------------------------------------------------------

Verdict step_refinement() {
  Verdict v;
  const MeanFieldJumpModel m = portfolio_example();
  std::vector<RiccatiTrajectory> sols;
  for (double dt : {1e-3, 5e-4, 2.5e-4, 1.25e-4}) sols.push_back(solve_gdre(m, 5.0, dt));
  std::vector<double> d;
  for (std::size_t j = 0; j + 1 < sols.size(); ++j) {
    double dist = 0.0;
    for (std::size_t k = 0; k < sols[j].grid.size(); ++k) {
      const RiccatiState& a = sols[j].states[k];
      const RiccatiState& b = sols[j + 1].states[2 * k];
      dist = std::max({dist, (a.P1 - b.P1).norm(), (a.Q1 - b.Q1).norm(), (a.P2 - b.P2).norm(), (a.Q2 - b.Q2).norm()});
    }
    d.push_back(dist);
  }
  v.require(d[1] < d[0] && d[2] < d[1], "distances " + sci(d[0]) + ", " + sci(d[1]) + ", " + sci(d[2]));
  return v;
}

// --- 4 ----------------------------------------------------------------------

double picard_monotone_violation(const PicardResult& r) {
  double worst = 0.0;
  for (std::size_t it = 1; it < r.history.size(); ++it)
    for (std::size_t k = 0; k < r.grid.size(); ++k)
      worst = std::max(worst, -min_eig(r.history[it - 1][k] - r.history[it][k]));
  return worst;
}

Verdict oracle_agreement() {
  Verdict v;
  const double tol = 1e-10;
  {
    const MeanFieldJumpModel m = portfolio_example();
    const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
    const DisturbanceModelFn closed = close_loop(m, traj.gains);
    const PicardResult p = picard_solve(closed, m.T, 5.0, 1e-3, tol, 500);
    const BrlSolution s = solve_brl(closed, m.T, 5.0, 1e-3);
    double diff = 0.0;
    for (std::size_t k = 0; k < s.grid.size(); ++k) diff = std::max(diff, (p.P[k] - s.P[k]).cwiseAbs().maxCoeff());
    v.require(s.feasible && diff < 1e-5, "closed loop |P_picard - P_brl| " + sci(diff));
    const double mono = picard_monotone_violation(p);
    v.require(mono <= 1e-9, "closed loop monotonicity defect " + sci(mono));
  }
  {
    const double gamma = 2.0, m11 = 1.3, b = 0.8, T = 1.0;
    DisturbanceOnlyModel d;
    d.n = d.nv = 1;
    d.A = d.Abar = d.C = d.Cbar = d.Bbar = d.D = d.Dbar = d.Mbar = Matrix::Zero(1, 1);
    d.B = Matrix::Constant(1, 1, b);
    d.M = Matrix::Constant(1, 1, m11);
    d.T = T;
    const PicardResult p = picard_solve(d, gamma, 1e-3, tol, 500);
    const BrlSolution s = solve_brl(d, gamma, 1e-3);
    double diff = 0.0, exact_err = 0.0;
    for (std::size_t k = 0; k < s.grid.size(); ++k) {
      diff = std::max(diff, std::abs(p.P[k](0, 0) - s.P[k](0, 0)));
      const double exact = -(gamma * m11 / b) * std::tan((T - s.grid[k]) * m11 * b / gamma);
      exact_err = std::max(exact_err, std::abs(s.P[k](0, 0) - exact));
    }
    v.require(diff < 1e-5, "scalar |P_picard - P_brl| " + sci(diff));
    v.require(exact_err < 1e-5, "scalar tangent error " + sci(exact_err));
    const double mono = picard_monotone_violation(p);
    v.require(mono <= 1e-9, "scalar monotonicity defect " + sci(mono));
  }
  return v;
}

// --- 5, 6 -------------------------------------------------------------------

Verdict value_identity(const Options& opt) {
  Verdict v;
  const MeanFieldJumpModel m = portfolio_example();
  const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
  Vector x0(2);
  x0 << 1.0, 1.0;
  const PathBundle b = simulate(m, PolicySpec::control(traj.gains), PolicySpec::disturbance(traj.gains),
                                NoiseSpec{opt.seed, opt.particles, 1e-3}, InitialState::deterministic(x0));
  const auto [j1, j2] = value_at(traj, x0, Matrix::Zero(2, 2));
  const auto [e1, se1] = estimate_cost(b, CostKind::J1, 5.0);
  const auto [e2, se2] = estimate_cost(b, CostKind::J2, 5.0);
  v.require(std::abs(e1 - j1) < 3 * se1,
            "J1 mc " + sci(e1) + " +- " + sci(se1) + " vs " + sci(j1));
  v.require(std::abs(e2 - j2) < 3 * se2,
            "J2 mc " + sci(e2) + " +- " + sci(se2) + " vs " + sci(j2));
  return v;
}

Verdict attenuation(const Options& opt) {
  Verdict v;
  const MeanFieldJumpModel m = portfolio_example();
  const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
  double worst = 0.0;
  int below = 0;
  for (int run = 0; run < 20; ++run) {
    const PathBundle b = simulate(m, PolicySpec::control(traj.gains), PolicySpec::white_noise(1.0),
                                  NoiseSpec{opt.seed * 1000 + run, 2000, 1e-3},
                                  InitialState::deterministic(Vector::Zero(2)));
    const double g = empirical_gain(b);
    worst = std::max(worst, g);
    if (g < 5.0) ++below;
  }
  v.require(below == 20, std::to_string(below) + "/20 runs below 5, worst ratio " + sci(worst));
  return v;
}

// --- 7 ----------------------------------------------------------------------

Verdict gamma_bisection() {
  Verdict v;
  const MeanFieldJumpModel m = portfolio_example();
  const GammaSearch g = gamma_threshold(m, 0.1, 5.0, 1e-4, 1e-3);
  v.require(g.hi - g.lo < 1e-3, "gamma* " + sci(g.gamma_star) + ", width " + sci(g.hi - g.lo));
  v.require(solve_gdre(m, 2.0 * g.gamma_star, 1e-3).feasible, "feasible at 2 gamma*");
  v.require(!solve_gdre(m, 0.5 * g.gamma_star, 1e-3).feasible, "infeasible at gamma*/2");
  return v;
}

// --- 8 ----------------------------------------------------------------------

RlGains long_horizon(MeanFieldJumpModel m, double gamma) {
  m.T = 30.0;
  const ZeroSumSolution z = solve_zero_sum(m, gamma, 0.01);
  const ZeroSumGains& g = z.gains.front();
  return {g.L, g.Ltilde, g.F, g.Ftilde};
}

double gap_to(const PiecewiseGains& a, const RlGains& g) {
  return gain_gap(a, uniform_gains(a.grid, g));
}

Verdict rl_recovery(const Options& opt) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const MeanFieldJumpModel m = rl_example();
  const double gamma = 5.0;
  const int N = 10, s = 30, K = 20;
  const auto grid = make_grid(m.T, m.T / N);
  const PiecewiseGains init = initial_gains(m, grid);
  const PiecewiseGains lemma = reference_gains(m, gamma, grid, m.T / N / K);
  const RlGains stationary = long_horizon(m, gamma);
  const Matrix MtM = m.M.transpose() * m.M;
  const auto ex = make_exploration(opt.seed, s, 1, 1, 1.0);
  const auto x0 = make_initial_states(opt.seed + 1, s, 2);
  AlgorithmSettings st;
  st.gamma = gamma;
  st.eps = st.eps1 = 1e-6;
  st.max_inner = st.max_outer = 100;

  const DataSet exact = collect(MomentPlant(m), init, ex, x0, K, opt.seed + 2);
  const AlgorithmResult oracle = run_algorithm1(exact, init, MtM, st);
  const double gap = gain_gap(oracle.gains, lemma);
  v.require(gap < 1e-6, "oracle gap to finite-horizon gains " + sci(gap));
  v.detail << " (gap to stationary saddle gains " << sci(gap_to(oracle.gains, stationary))
           << ", outer iterations " << oracle.report.outer_iterations << ")";

  try {
    const DataSet sampled = collect(ParticlePlant(m, opt.rl_paths), init, ex, x0, K, opt.seed + 2);
    const AlgorithmResult r = run_algorithm1(sampled, init, MtM, st);
    const double sgap = gain_gap(r.gains, lemma);
    v.require(sgap < 5e-2, "sampled gap " + sci(sgap));
  } catch (const Error& e) {
    v.require(false, std::string("sampled run: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  v.require(secs < 600.0, "runtime " + sci(secs) + " s");
  return v;
}

// --- 9, 10 ------------------------------------------------------------------

Verdict encodings() {
  Verdict v;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  double round_trip = 0.0, identity = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 4;
    Matrix R(n, n);
    for (int i = 0; i < R.size(); ++i) R(i) = nd(rng);
    const Matrix P = 0.5 * (R + R.transpose());
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = nd(rng);
    round_trip = std::max(round_trip, (smat(svec(P), n) - P).cwiseAbs().maxCoeff());
    const double q = x.dot(P * x);
    identity = std::max(identity, std::abs(svec(P).dot(xbar(x)) - q) / std::max(1.0, std::abs(q)));
  }
  int bad = 0;
  for (int n = 1; n <= 4; ++n)
    for (int nu = 1; nu <= 4; ++nu)
      for (int nv = 1; nv <= 4; ++nv)
        if (XiLayout(n, nu, nv).g != 3 * n * (n + 1) / 2 + 2 * nu * n + 2 * nv * n + nu * (nu + 1) +
                                         nv * (nv + 1) + 2 * nu * nv)
          ++bad;
  v.require(round_trip == 0.0, "round trip error " + sci(round_trip));
  v.require(identity <= 1e-12, "quadratic identity error " + sci(identity));
  v.require(bad == 0, std::to_string(bad) + " layout mismatches");
  return v;
}

double worst_residual(const MeanFieldJumpModel& m, double gamma, int N, int K, std::uint64_t seed) {
  const auto grid = make_grid(m.T, m.T / N);
  const PiecewiseGains init = initial_gains(m, grid);
  const DataSet data = collect(MomentPlant(m), init, make_exploration(seed, 30, 1, 1, 1.0),
                               make_initial_states(seed + 1, 30, 2), K, seed + 2);
  const EvaluatedPolicy ev = pe_oracle(m, init, gamma, 20);
  const Matrix MtM = m.M.transpose() * m.M;
  double worst = 0.0;
  for (std::size_t i = 0; i < init.intervals(); ++i) {
    XiBlocks xb = model_blocks(m, ev.P_at(i, 0.5), ev.Q_at(i, 0.5), init.gains[i]);
    xb.P_next = ev.P_at(i, 1.0);
    xb.Q_next = ev.Q_at(i, 1.0);
    xb.Q_now = ev.Q_at(i, 0.0);
    const RegressionBatch b = assemble(data, init.gains[i], MtM, gamma, i);
    worst = std::max(worst, (b.Phi * pack(xb) - b.Theta).cwiseAbs().maxCoeff() / b.Theta.cwiseAbs().maxCoeff());
  }
  return worst;
}

Verdict regression_residual(const Options& opt) {
  Verdict v;
  const MeanFieldJumpModel m = rl_example();
  const double coarse = worst_residual(m, 5.0, 10, 20, opt.seed);
  const double fine = worst_residual(m, 5.0, 20, 20, opt.seed);
  v.require(coarse < 1e-8, "relative residual " + sci(coarse) + " at 10 intervals");
  v.require(fine * 2.0 <= coarse, "halved interval " + sci(fine));
  return v;
}

}  // namespace

std::vector<Outcome> run_all(const Options& opt, std::ostream& out) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"portfolio Riccati solution feasible with sign structure", portfolio_signs},
      {"determinant signs", determinant_signs},
      {"step refinement", step_refinement},
      {"Picard and bounded-real solutions agree", oracle_agreement},
      {"value identity under the saddle pair", [&] { return value_identity(opt); }},
      {"attenuation under random disturbances", [&] { return attenuation(opt); }},
      {"gamma threshold bisection", gamma_bisection},
      {"model-free recovery of the saddle gains", [&] { return rl_recovery(opt); }},
      {"encoding identities", encodings},
      {"regression residual", [&] { return regression_residual(opt); }},
  };
  std::vector<Outcome> results;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    o.id = static_cast<int>(i + 1);
    o.title = criteria[i].first;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      Verdict v = criteria[i].second();
      o.pass = v.pass;
      o.detail = v.detail.str();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << o.id << "  " << o.title << "  ("
        << std::fixed << std::setprecision(2) << o.seconds << " s)  " << o.detail << std::endl;
    out.unsetf(std::ios::floatfield);
    results.push_back(std::move(o));
  }
  return results;
}

}  // namespace mfh::checks
