#include "mfh/rl.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "mfh/integrator.hpp"
#include "mfh/random.hpp"
#include "mfh/riccati.hpp"

namespace mfh {

namespace {

double min_eig(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Vector vec(const Matrix& X) { return Eigen::Map<const Vector>(X.data(), X.size()); }

Matrix unvec(const Vector& v, int offset, int rows, int cols) {
  return Eigen::Map<const Matrix>(v.data() + offset, rows, cols);
}

void require_no_jumps(const MeanFieldJumpModel& m, const char* who) {
  require_valid(m);
  if (!m.jump_atoms.empty())
    throw InvalidArgument(std::string(who) + ": the learning plant has no jump terms; strip the atoms first");
}

}  // namespace

// ---------------------------------------------------------------------------

Vector svec(const Matrix& P) {
  if (P.rows() != P.cols()) throw ShapeError("svec: matrix not square");
  const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidArgument("svec: matrix not symmetric");
  const int n = static_cast<int>(P.rows());
  Vector v(tri(n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) v(k++) = (i == j ? 1.0 : 2.0) * P(i, j);
  return v;
}

Matrix smat(const Vector& v, int n) {
  if (v.size() != tri(n)) throw ShapeError("smat: length does not match n(n+1)/2");
  Matrix P(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double x = (i == j ? 1.0 : 0.5) * v(k++);
      P(i, j) = P(j, i) = x;
    }
  return P;
}

Vector xbar(const Vector& x) {
  const int n = static_cast<int>(x.size());
  Vector v(tri(n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) v(k++) = x(i) * x(j);
  return v;
}

Vector vech(const Matrix& X) {
  if (X.rows() != X.cols()) throw ShapeError("vech: matrix not square");
  const int n = static_cast<int>(X.rows());
  Vector v(tri(n));
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) v(k++) = X(i, j);
  return v;
}

XiLayout::XiLayout(int n_, int nu_, int nv_) : n(n_), nu(nu_), nv(nv_) {
  if (n < 1 || nu < 1 || nv < 1) throw InvalidArgument("XiLayout: dimensions must be positive");
  int k = 0;
  const auto take = [&k](int len) {
    const int at = k;
    k += len;
    return at;
  };
  Q_next = take(tri(n));
  Q_now = take(tri(n));
  Bt2 = take(nu * n);
  Bt1 = take(nv * n);
  B2 = take(nu * n);
  B1 = take(nv * n);
  Dt2 = take(tri(nu));
  Dt1 = take(tri(nv));
  D2 = take(tri(nu));
  D1 = take(tri(nv));
  H = take(nu * nv);
  Ht = take(nu * nv);
  P_next = take(tri(n));
  g = k;
}

int unknown_count(int n, int nu, int nv) {
  return 3 * n * (n + 1) / 2 + 2 * nu * n + 2 * nv * n + nu * (nu + 1) + nv * (nv + 1) + 2 * nu * nv;
}

// ---------------------------------------------------------------------------

RlGains RlGains::zeros(const Dims& d) {
  return {Matrix::Zero(d.nu, d.n), Matrix::Zero(d.nu, d.n), Matrix::Zero(d.nv, d.n),
          Matrix::Zero(d.nv, d.n)};
}

const RlGains& PiecewiseGains::on(double t) const {
  if (gains.empty()) throw InvalidArgument("PiecewiseGains: empty schedule");
  const auto it = std::upper_bound(grid.begin(), grid.end(), t);
  std::size_t i = it == grid.begin() ? 0 : static_cast<std::size_t>(it - grid.begin()) - 1;
  return gains[std::min(i, gains.size() - 1)];
}

PiecewiseGains uniform_gains(const std::vector<double>& grid, const RlGains& g) {
  if (grid.size() < 2) throw InvalidArgument("uniform_gains: grid needs two points");
  return {grid, std::vector<RlGains>(grid.size() - 1, g)};
}

Matrix EvaluatedPolicy::P_at(std::size_t interval, double frac) const {
  return P[interval * substeps + static_cast<std::size_t>(std::lround(frac * substeps))];
}

Matrix EvaluatedPolicy::Q_at(std::size_t interval, double frac) const {
  return Q[interval * substeps + static_cast<std::size_t>(std::lround(frac * substeps))];
}

EvaluatedPolicy pe_oracle(const MeanFieldJumpModel& m, const PiecewiseGains& pg, double gamma,
                          int substeps) {
  require_no_jumps(m, "pe_oracle");
  if (substeps < 2 || substeps % 2 != 0) throw InvalidArgument("pe_oracle: substeps must be even");
  const int n = m.dims.n;
  const std::size_t N = pg.intervals();
  if (N == 0 || pg.grid.size() != N + 1) throw ShapeError("pe_oracle: gains do not match the grid");
  const Matrix As = m.A + m.Abar, Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  const Matrix MtM = m.M.transpose() * m.M;
  const double g2 = gamma * gamma;

  EvaluatedPolicy ev;
  ev.substeps = substeps;
  ev.grid.resize(N * substeps + 1);
  ev.P.resize(ev.grid.size());
  ev.Q.resize(ev.grid.size());
  Matrix terminal = Matrix::Zero(2 * n, 2 * n);
  for (std::size_t i = N; i-- > 0;) {
    const RlGains& g = pg.gains[i];
    // P and Q are carried as blkdiag(P, Q); the Q equation's C'PC coupling is
    // the single quadratic term E'ZE with E = [[0, Cms], [0, 0]].
    LyapunovCoefficients c;
    c.A = Matrix::Zero(2 * n, 2 * n);
    c.A.topLeftCorner(n, n) = m.A + m.B2 * g.L + m.B1 * g.F;
    c.A.bottomRightCorner(n, n) = As + B2s * g.Ltilde + B1s * g.Ftilde;
    c.C = Matrix::Zero(2 * n, 2 * n);
    c.C.topLeftCorner(n, n) = m.C + m.D2 * g.L + m.D1 * g.F;
    Matrix E = Matrix::Zero(2 * n, 2 * n);
    E.topRightCorner(n, n) = Cs + D2s * g.Ltilde + D1s * g.Ftilde;
    c.jumps.emplace_back(1.0, E);
    c.source = Matrix::Zero(2 * n, 2 * n);
    c.source.topLeftCorner(n, n) = MtM + g.L.transpose() * g.L - g2 * g.F.transpose() * g.F;
    c.source.bottomRightCorner(n, n) =
        MtM + g.Ltilde.transpose() * g.Ltilde - g2 * g.Ftilde.transpose() * g.Ftilde;

    std::vector<double> sub(substeps + 1);
    const double t0 = pg.grid[i], t1 = pg.grid[i + 1];
    for (int k = 0; k <= substeps; ++k) sub[k] = t0 + (t1 - t0) * k / substeps;
    const LyapunovSolution s = lyapunov_solve([&c](double) { return c; }, terminal, sub);
    for (int k = 0; k <= substeps; ++k) {
      const std::size_t at = i * substeps + k;
      ev.grid[at] = sub[k];
      ev.P[at] = s.P[k].topLeftCorner(n, n);
      ev.Q[at] = s.P[k].bottomRightCorner(n, n);
    }
    terminal = s.P[0];
  }
  return ev;
}

XiBlocks model_blocks(const MeanFieldJumpModel& m, const Matrix& P, const Matrix& Q, const RlGains& g) {
  const Matrix Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  XiBlocks b;
  b.Bt2 = B2s.transpose() * Q + D2s.transpose() * P * (Cs + D1s * g.Ftilde);
  b.Bt1 = B1s.transpose() * Q + D1s.transpose() * P * (Cs + D2s * g.Ltilde);
  b.B2 = m.B2.transpose() * P + m.D2.transpose() * P * (m.C + m.D1 * g.F);
  b.B1 = m.B1.transpose() * P + m.D1.transpose() * P * (m.C + m.D2 * g.L);
  b.Dt2 = symmetrize(D2s.transpose() * P * D2s);
  b.Dt1 = symmetrize(D1s.transpose() * P * D1s);
  b.D2 = symmetrize(m.D2.transpose() * P * m.D2);
  b.D1 = symmetrize(m.D1.transpose() * P * m.D1);
  b.H = m.D2.transpose() * P * m.D1;
  b.Ht = D2s.transpose() * P * D1s;
  return b;
}

Vector pack(const XiBlocks& b) {
  const XiLayout l(static_cast<int>(b.P_next.rows()), static_cast<int>(b.B2.rows()),
                   static_cast<int>(b.B1.rows()));
  Vector xi(l.g);
  xi.segment(l.Q_next, tri(l.n)) = svec(b.Q_next);
  xi.segment(l.Q_now, tri(l.n)) = svec(b.Q_now);
  xi.segment(l.Bt2, l.nu * l.n) = vec(b.Bt2);
  xi.segment(l.Bt1, l.nv * l.n) = vec(b.Bt1);
  xi.segment(l.B2, l.nu * l.n) = vec(b.B2);
  xi.segment(l.B1, l.nv * l.n) = vec(b.B1);
  xi.segment(l.Dt2, tri(l.nu)) = svec(b.Dt2);
  xi.segment(l.Dt1, tri(l.nv)) = svec(b.Dt1);
  xi.segment(l.D2, tri(l.nu)) = svec(b.D2);
  xi.segment(l.D1, tri(l.nv)) = svec(b.D1);
  xi.segment(l.H, l.nu * l.nv) = vec(b.H);
  xi.segment(l.Ht, l.nu * l.nv) = vec(b.Ht);
  xi.segment(l.P_next, tri(l.n)) = svec(b.P_next);
  return xi;
}

XiBlocks unpack(const Vector& xi, const XiLayout& l) {
  if (xi.size() != l.g) throw ShapeError("unpack: Ξ has the wrong length");
  XiBlocks b;
  b.Q_next = smat(xi.segment(l.Q_next, tri(l.n)), l.n);
  b.Q_now = smat(xi.segment(l.Q_now, tri(l.n)), l.n);
  b.Bt2 = unvec(xi, l.Bt2, l.nu, l.n);
  b.Bt1 = unvec(xi, l.Bt1, l.nv, l.n);
  b.B2 = unvec(xi, l.B2, l.nu, l.n);
  b.B1 = unvec(xi, l.B1, l.nv, l.n);
  b.Dt2 = smat(xi.segment(l.Dt2, tri(l.nu)), l.nu);
  b.Dt1 = smat(xi.segment(l.Dt1, tri(l.nv)), l.nv);
  b.D2 = smat(xi.segment(l.D2, tri(l.nu)), l.nu);
  b.D1 = smat(xi.segment(l.D1, tri(l.nv)), l.nv);
  b.H = unvec(xi, l.H, l.nu, l.nv);
  b.Ht = unvec(xi, l.Ht, l.nu, l.nv);
  b.P_next = smat(xi.segment(l.P_next, tri(l.n)), l.n);
  return b;
}

namespace {

Matrix solve_bracket(const Matrix& R, const Matrix& rhs, const char* which) {
  Eigen::FullPivLU<Matrix> lu(R);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw SingularImprovement(std::string("improve: bracket for ") + which + " is singular");
  return lu.solve(rhs);
}

Matrix solve_disturbance_bracket(const Matrix& R, const Matrix& rhs, const char* which) {
  if (!(min_eig(R) > 0.0))
    throw SingularImprovement(std::string("improve: gamma^2 I - D'PD for ") + which +
                              " is not positive definite");
  return solve_bracket(R, rhs, which);
}

}  // namespace

RlGains improve(const XiBlocks& b, const RlGains& prev, double gamma, ImproveWhich which) {
  RlGains g = prev;
  const double g2 = gamma * gamma;
  if (which != ImproveWhich::disturbance) {
    const Eigen::Index nu = b.D2.rows();
    g.L = -solve_bracket(Matrix::Identity(nu, nu) + b.D2, b.B2, "L");
    g.Ltilde = -solve_bracket(Matrix::Identity(nu, nu) + b.Dt2, b.Bt2, "Ltilde");
  }
  if (which != ImproveWhich::control) {
    const Eigen::Index nv = b.D1.rows();
    g.F = solve_disturbance_bracket(g2 * Matrix::Identity(nv, nv) - b.D1, b.B1, "F");
    g.Ftilde = solve_disturbance_bracket(g2 * Matrix::Identity(nv, nv) - b.Dt1, b.Bt1, "Ftilde");
  }
  return g;
}

RlGains improve(const MeanFieldJumpModel& m, const Matrix& P, const Matrix& Q, const RlGains& prev,
                double gamma, ImproveWhich which) {
  const auto [n, nu, nv] = m.dims;
  (void)n;
  const Matrix Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  const double g2 = gamma * gamma;
  RlGains g = prev;
  if (which != ImproveWhich::disturbance) {
    const Matrix G = P * m.B2 + (m.C + m.D1 * prev.F).transpose() * P * m.D2;
    g.L = -solve_bracket(Matrix::Identity(nu, nu) + m.D2.transpose() * P * m.D2, G.transpose(), "L");
    const Matrix Gt = Q * B2s + (Cs + D1s * prev.Ftilde).transpose() * P * D2s;
    g.Ltilde = -solve_bracket(Matrix::Identity(nu, nu) + D2s.transpose() * P * D2s, Gt.transpose(), "Ltilde");
  }
  if (which != ImproveWhich::control) {
    // The disturbance update sees the control gains just computed.
    const Matrix G = P * m.B1 + (m.C + m.D2 * g.L).transpose() * P * m.D1;
    g.F = solve_disturbance_bracket(g2 * Matrix::Identity(nv, nv) - m.D1.transpose() * P * m.D1,
                                    G.transpose(), "F");
    const Matrix Gt = Q * B1s + (Cs + D2s * g.Ltilde).transpose() * P * D1s;
    g.Ftilde = solve_disturbance_bracket(g2 * Matrix::Identity(nv, nv) - D1s.transpose() * P * D1s,
                                         Gt.transpose(), "Ftilde");
  }
  return g;
}

// ---------------------------------------------------------------------------

std::vector<ExplorationPair> make_exploration(std::uint64_t seed, int count, int nu, int nv,
                                              double amplitude, int terms, double w_lo, double w_hi) {
  if (count < 1 || terms < 1 || !(w_hi >= w_lo)) throw InvalidArgument("make_exploration: bad arguments");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(w_lo, w_hi), phase(0.0, 2.0 * std::numbers::pi),
      scale(0.5, 1.5);
  const auto rows = [&](int dim) {
    std::vector<std::vector<Sinusoid>> out(dim);
    for (auto& row : out)
      for (int j = 0; j < terms; ++j) row.push_back({amplitude * scale(rng), freq(rng), phase(rng)});
    return out;
  };
  std::vector<ExplorationPair> out(count);
  for (ExplorationPair& e : out) {
    e.u.common = rows(nu);
    e.u.per_particle = rows(nu);
    e.v.common = rows(nv);
    e.v.per_particle = rows(nv);
    // Shared phases make the u and v excitations correlated, which the
    // cross block H needs; random amplitudes separate the D2 and D1 columns.
    e.u.phase_stream = e.v.phase_stream = 0;
  }
  return out;
}

std::vector<Vector> make_initial_states(std::uint64_t seed, int count, int n, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<Vector> out(count, Vector(n));
  for (Vector& x : out)
    for (int r = 0; r < n; ++r) x(r) = d(rng);
  return out;
}

MomentPlant::MomentPlant(MeanFieldJumpModel model) : model_(std::move(model)) {
  require_no_jumps(model_, "MomentPlant");
}

namespace {

double common_signal(const std::vector<std::vector<Sinusoid>>& rows, int r, double t) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const Sinusoid& x : rows[r]) s += x.amplitude * std::sin(x.omega * t + x.phase);
  return s;
}

}  // namespace

IntervalMoments MomentPlant::run(double t0, double t1, int substeps, const Vector& x0, const RlGains& b,
                                 const ExplorationPair& ex, std::uint64_t) const {
  const MeanFieldJumpModel& m = model_;
  const auto [n, nu, nv] = m.dims;
  if (ex.u.white != 0.0 || ex.v.white != 0.0)
    throw InvalidArgument("MomentPlant: white-noise exploration has no exact moment form");
  if (substeps < 1 || !(t1 > t0)) throw InvalidArgument("MomentPlant: bad interval");

  // Random-phase terms: a sin(ωt + φ) = a cos(ωt) sin φ + a sin(ωt) cos φ,
  // with ζ = (sin φ, cos φ) per term and E[ζζ'] = I/2.
  // Terms naming the same (phase stream, index) share one ζ pair.
  struct Term {
    int player, row, slot;
    Sinusoid s;
  };
  std::vector<Term> terms;
  std::map<std::pair<int, int>, int> slots;
  const auto add_terms = [&](const Exploration& e, int player) {
    const int stream = e.phase_stream >= 0 ? e.phase_stream : player;
    int j = 0;
    for (int r = 0; r < static_cast<int>(e.per_particle.size()); ++r)
      for (const Sinusoid& s : e.per_particle[r]) {
        const auto [it, fresh] = slots.try_emplace({stream, j++}, static_cast<int>(slots.size()));
        (void)fresh;
        terms.push_back({player, r, it->second, s});
      }
  };
  add_terms(ex.u, 0);
  add_terms(ex.v, 1);
  const int nz = 2 * static_cast<int>(slots.size());
  const int d = n + nu + nv;

  const Matrix As = m.A + m.Abar, Cs = m.C + m.Cbar;
  const Matrix B1s = m.B1 + m.B1bar, B2s = m.B2 + m.B2bar;
  const Matrix D1s = m.D1 + m.D1bar, D2s = m.D2 + m.D2bar;
  const Matrix Acl = m.A + m.B2 * b.L + m.B1 * b.F;
  const Matrix Ccl = m.C + m.D2 * b.L + m.D1 * b.F;

  // Flat state: m | Yy (n×n) | Yz (n×nz) | S_dev (d×d) | S_mean (d×d).
  const int o_Yy = n, o_Yz = o_Yy + n * n, o_Sd = o_Yz + n * nz, o_Sm = o_Sd + d * d;
  const int len = o_Sm + d * d;

  const auto rhs = [&](double t, const Vector& s) -> Vector {
    const Vector mean = s.head(n);
    const Eigen::Map<const Matrix> Yy(s.data() + o_Yy, n, n);
    const Eigen::Map<const Matrix> Yz(s.data() + o_Yz, n, nz);
    Matrix Cu = Matrix::Zero(nu, nz), Cv = Matrix::Zero(nv, nz);
    for (const Term& tm : terms) {
      Matrix& Cx = tm.player == 0 ? Cu : Cv;
      Cx(tm.row, 2 * tm.slot) += tm.s.amplitude * std::cos(tm.s.omega * t);
      Cx(tm.row, 2 * tm.slot + 1) += tm.s.amplitude * std::sin(tm.s.omega * t);
    }
    Vector eu(nu), ev(nv);
    for (int r = 0; r < nu; ++r) eu(r) = common_signal(ex.u.common, r, t);
    for (int r = 0; r < nv; ++r) ev(r) = common_signal(ex.v.common, r, t);
    const Vector ubar = b.Ltilde * mean + eu, vbar = b.Ftilde * mean + ev;
    const Vector sig_m = Cs * mean + D2s * ubar + D1s * vbar;
    const Matrix G = m.B2 * Cu + m.B1 * Cv;
    const Matrix Dz = m.D2 * Cu + m.D1 * Cv;

    Vector out(len);
    out.head(n) = As * mean + B2s * ubar + B1s * vbar;
    const Matrix CY = Ccl * Yz * Dz.transpose();
    const Matrix noise = Ccl * Yy * Ccl.transpose() + CY + CY.transpose() + 0.5 * Dz * Dz.transpose() +
                         sig_m * sig_m.transpose();
    const Matrix GY = G * Yz.transpose();
    Eigen::Map<Matrix>(out.data() + o_Yy, n, n) =
        Acl * Yy + Yy * Acl.transpose() + GY + GY.transpose() + noise;
    Eigen::Map<Matrix>(out.data() + o_Yz, n, nz) = Acl * Yz + 0.5 * G;

    // Second moment of (y, ζ) mapped to w = (y, ŭ, v̆).
    Matrix Z(n + nz, n + nz);
    Z.topLeftCorner(n, n) = Yy;
    Z.topRightCorner(n, nz) = Yz;
    Z.bottomLeftCorner(nz, n) = Yz.transpose();
    Z.bottomRightCorner(nz, nz) = 0.5 * Matrix::Identity(nz, nz);
    Matrix Psi = Matrix::Zero(d, n + nz);
    Psi.topLeftCorner(n, n).setIdentity();
    Psi.block(n, 0, nu, n) = b.L;
    Psi.block(n, n, nu, nz) = Cu;
    Psi.block(n + nu, 0, nv, n) = b.F;
    Psi.block(n + nu, n, nv, nz) = Cv;
    Eigen::Map<Matrix>(out.data() + o_Sd, d, d) = Psi * Z * Psi.transpose();
    Vector w(d);
    w << mean, ubar, vbar;
    Eigen::Map<Matrix>(out.data() + o_Sm, d, d) = w * w.transpose();
    return out;
  };

  Vector s = Vector::Zero(len);
  s.head(n) = x0;
  const double h = (t1 - t0) / substeps;
  for (int k = 0; k < substeps; ++k) s = rk4_step_forward(t0 + k * h, h, s, rhs);

  IntervalMoments out;
  out.x_start = x0;
  out.mean_end = s.head(n);
  out.cov_end = symmetrize(Eigen::Map<const Matrix>(s.data() + o_Yy, n, n));
  out.S_dev = symmetrize(Eigen::Map<const Matrix>(s.data() + o_Sd, d, d));
  out.S_mean = symmetrize(Eigen::Map<const Matrix>(s.data() + o_Sm, d, d));
  return out;
}

ParticlePlant::ParticlePlant(MeanFieldJumpModel model, long paths) : model_(std::move(model)), paths_(paths) {
  require_no_jumps(model_, "ParticlePlant");
  if (paths_ < 1) throw InvalidArgument("ParticlePlant: path count must be positive");
}

IntervalMoments ParticlePlant::run(double t0, double t1, int substeps, const Vector& x0, const RlGains& b,
                                   const ExplorationPair& ex, std::uint64_t seed) const {
  const auto [n, nu, nv] = model_.dims;
  const int d = n + nu + nv;
  NoiseSpec ns;
  ns.seed = seed;
  ns.particles = paths_;
  ns.dt = (t1 - t0) / substeps;
  ns.t0 = t0;
  ns.t1 = t1;
  ns.store_paths = true;
  PolicySpec u = PolicySpec::feedback([L = b.L, Lt = b.Ltilde](double) { return std::make_pair(L, Lt); });
  u.exploration = ex.u;
  PolicySpec v = PolicySpec::feedback([F = b.F, Ft = b.Ftilde](double) { return std::make_pair(F, Ft); });
  v.exploration = ex.v;
  const PathBundle pb = simulate(model_, u, v, ns, InitialState::deterministic(x0));

  IntervalMoments out;
  out.x_start = x0;
  out.S_dev = Matrix::Zero(d, d);
  out.S_mean = Matrix::Zero(d, d);
  Matrix W(d, paths_);
  const std::size_t N = pb.grid.size() - 1;
  for (std::size_t s = 0; s <= N; ++s) {
    Vector wbar(d);
    wbar << pb.mean_x[s], pb.mean_u[s], pb.mean_v[s];
    W.topRows(n) = pb.X[s].colwise() - pb.mean_x[s];
    W.middleRows(n, nu) = pb.U[s].colwise() - pb.mean_u[s];
    W.bottomRows(nv) = pb.V[s].colwise() - pb.mean_v[s];
    const double w = (s == 0 || s == N) ? 0.5 * ns.dt : ns.dt;
    out.S_dev.noalias() += (w / static_cast<double>(paths_)) * (W * W.transpose());
    out.S_mean.noalias() += w * (wbar * wbar.transpose());
    if (s == N) out.cov_end = W.topRows(n) * W.topRows(n).transpose() / static_cast<double>(paths_);
  }
  out.mean_end = pb.mean_x.back();
  return out;
}

DataSet collect(const Plant& plant, const PiecewiseGains& behaviour,
                const std::vector<ExplorationPair>& explore, const std::vector<Vector>& initial_states,
                int substeps, std::uint64_t seed) {
  const std::size_t S = initial_states.size(), N = behaviour.intervals();
  if (explore.size() != S) throw ShapeError("collect: one exploration signal per initial state");
  if (N == 0) throw InvalidArgument("collect: empty behaviour schedule");
  DataSet data;
  data.grid = behaviour.grid;
  data.substeps = substeps;
  data.paths = plant.paths();
  data.moments.assign(N, std::vector<IntervalMoments>(S));
  for (std::size_t q = 0; q < S; ++q) {
    Vector x = initial_states[q];
    for (std::size_t i = 0; i < N; ++i) {
      const std::uint64_t s = counter_hash(seed, q, i, 0x726c);
      data.moments[i][q] = plant.run(data.grid[i], data.grid[i + 1], substeps, x, behaviour.gains[i],
                                     explore[q], s);
      x = data.moments[i][q].mean_end;
    }
  }
  return data;
}

// ---------------------------------------------------------------------------

void regression_row(const IntervalMoments& mo, const RlGains& g, const Matrix& MtM, double gamma,
                    Eigen::Ref<Vector> phi, double& theta) {
  const int n = static_cast<int>(mo.x_start.size());
  const int nu = static_cast<int>(g.L.rows()), nv = static_cast<int>(g.F.rows());
  const XiLayout l(n, nu, nv);
  if (phi.size() != l.g) throw ShapeError("regression_row: row has the wrong length");
  const Matrix& S = mo.S_dev;
  const Matrix& Sm = mo.S_mean;
  const Matrix Syy = S.topLeftCorner(n, n), Syu = S.block(0, n, n, nu), Syv = S.block(0, n + nu, n, nv);
  const Matrix Suu = S.block(n, n, nu, nu), Svv = S.block(n + nu, n + nu, nv, nv);
  const Matrix Suv = S.block(n, n + nu, nu, nv);
  const Matrix Smm = Sm.topLeftCorner(n, n), Smu = Sm.block(0, n, n, nu), Smv = Sm.block(0, n + nu, n, nv);
  const Matrix Suu_m = Sm.block(n, n, nu, nu), Svv_m = Sm.block(n + nu, n + nu, nv, nv);
  const Matrix Suv_m = Sm.block(n, n + nu, nu, nv);

  phi.segment(l.Q_next, tri(n)) = -xbar(mo.mean_end);
  phi.segment(l.Q_now, tri(n)) = xbar(mo.x_start);
  phi.segment(l.Bt2, nu * n) = 2.0 * vec(Smu.transpose() - g.Ltilde * Smm);
  phi.segment(l.Bt1, nv * n) = 2.0 * vec(Smv.transpose() - g.Ftilde * Smm);
  phi.segment(l.B2, nu * n) = 2.0 * vec(Syu.transpose() - g.L * Syy);
  phi.segment(l.B1, nv * n) = 2.0 * vec(Syv.transpose() - g.F * Syy);
  phi.segment(l.Dt2, tri(nu)) = vech(Suu_m - g.Ltilde * Smm * g.Ltilde.transpose());
  phi.segment(l.Dt1, tri(nv)) = vech(Svv_m - g.Ftilde * Smm * g.Ftilde.transpose());
  phi.segment(l.D2, tri(nu)) = vech(Suu - g.L * Syy * g.L.transpose());
  phi.segment(l.D1, tri(nv)) = vech(Svv - g.F * Syy * g.F.transpose());
  phi.segment(l.H, nu * nv) =
      2.0 * vec(Suv - Syu.transpose() * g.F.transpose() - g.L * Syv + g.L * Syy * g.F.transpose());
  phi.segment(l.Ht, nu * nv) = 2.0 * vec(Suv_m - Smu.transpose() * g.Ftilde.transpose() - g.Ltilde * Smv +
                                         g.Ltilde * Smm * g.Ftilde.transpose());
  phi.segment(l.P_next, tri(n)) = -vech(mo.cov_end);

  const double g2 = gamma * gamma;
  const Matrix W = MtM - g2 * g.F.transpose() * g.F + g.L.transpose() * g.L;
  const Matrix Wt = MtM - g2 * g.Ftilde.transpose() * g.Ftilde + g.Ltilde.transpose() * g.Ltilde;
  theta = (Wt * Smm).trace() + (W * Syy).trace();
}

namespace {

Vector column_scales(const Matrix& Phi) {
  Vector d = Phi.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < d.size(); ++j)
    if (!(d(j) > 0.0)) d(j) = 1.0;
  return d;
}

}  // namespace

RegressionBatch assemble(const DataSet& data, const RlGains& current, const Matrix& MtM, double gamma,
                         std::size_t interval) {
  if (interval >= data.moments.size()) throw InvalidArgument("assemble: interval out of range");
  const auto& rows = data.moments[interval];
  if (rows.empty()) throw InvalidArgument("assemble: no data for the interval");
  const int n = static_cast<int>(rows.front().x_start.size());
  const XiLayout l(n, static_cast<int>(current.L.rows()), static_cast<int>(current.F.rows()));
  RegressionBatch b;
  b.interval = interval;
  b.Phi.resize(static_cast<Eigen::Index>(rows.size()), l.g);
  b.Theta.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t q = 0; q < rows.size(); ++q) {
    Vector phi(l.g);
    double theta = 0.0;
    regression_row(rows[q], current, MtM, gamma, phi, theta);
    b.Phi.row(static_cast<Eigen::Index>(q)) = phi.transpose();
    b.Theta(static_cast<Eigen::Index>(q)) = theta;
  }
  if (!b.Phi.allFinite() || !b.Theta.allFinite()) throw InvalidArgument("assemble: non-finite data");

  const Vector scale = column_scales(b.Phi);
  const Matrix Ps = b.Phi * scale.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Matrix> svd(Ps);
  const Vector sv = svd.singularValues();
  b.sigma_max = sv.size() ? sv(0) : 0.0;
  b.sigma_min = sv.size() ? sv(sv.size() - 1) : 0.0;
  const double tol = static_cast<double>(std::max(Ps.rows(), Ps.cols())) *
                     std::numeric_limits<double>::epsilon() * b.sigma_max;
  b.rank = 0;
  for (Eigen::Index k = 0; k < sv.size(); ++k)
    if (sv(k) > tol && b.sigma_max > 0.0) ++b.rank;
  if (b.Phi.rows() < l.g) b.sigma_min = 0.0;
  if (b.rank < l.g) throw RankDeficient(b.rank, l.g);
  return b;
}

Vector solve_interval(const RegressionBatch& b, LeastSquares method) {
  const Vector scale = column_scales(b.Phi);
  const Matrix Ps = b.Phi * scale.cwiseInverse().asDiagonal();
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ps);
  if (cod.rank() < b.Phi.cols()) throw RankDeficient(cod.rank(), b.Phi.cols());
  if (method == LeastSquares::normal_equations) {
    const Matrix N = b.Phi.transpose() * b.Phi;
    return N.ldlt().solve(b.Phi.transpose() * b.Theta);
  }
  return (cod.solve(b.Theta).array() / scale.array()).matrix();
}

// ---------------------------------------------------------------------------

namespace {

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

double gains_distance(const RlGains& a, const RlGains& b, bool control) {
  return control ? std::max(max_abs(a.L - b.L), max_abs(a.Ltilde - b.Ltilde))
                 : std::max(max_abs(a.F - b.F), max_abs(a.Ftilde - b.Ftilde));
}

// Shared loop of Algorithm 1. `evaluate` fills the identified P(t_{i+1}),
// Q(t_{i+1}), Q(t_i) and the blocks for every interval under `gains`.
template <class Evaluate>
AlgorithmResult policy_iteration(PiecewiseGains gains, const AlgorithmSettings& st, Evaluate&& evaluate) {
  const std::size_t N = gains.intervals();
  AlgorithmResult res;
  std::vector<XiBlocks> blocks(N);
  std::vector<Matrix> prevP, prevQ;
  for (int k = 0;; ++k) {
    if (k == st.max_outer)
      throw NoConvergence("algorithm 1: outer loop did not converge in " + std::to_string(st.max_outer) +
                          " iterations (last distance " +
                          std::to_string(res.report.outer_distance.back()) + ")");
    int j = 0;
    prevP.clear();
    prevQ.clear();
    for (;; ++j) {
      if (j == st.max_inner)
        throw NoConvergence("algorithm 1: inner loop did not converge in " + std::to_string(st.max_inner) +
                            " iterations (last distance " +
                            std::to_string(res.report.inner_distance.back()) + ")");
      evaluate(gains, blocks, res.report.condition);
      for (std::size_t i = 0; i < N; ++i)
        gains.gains[i] = improve(blocks[i], gains.gains[i], st.gamma, ImproveWhich::control);
      double dist = std::numeric_limits<double>::infinity();
      if (!prevP.empty()) {
        dist = 0.0;
        for (std::size_t i = 0; i < N; ++i)
          dist = std::max({dist, (blocks[i].P_next - prevP[i]).norm(), (blocks[i].Q_next - prevQ[i]).norm(),
                           (blocks[i].Q_now - prevQ[N + i]).norm()});
      }
      prevP.resize(N);
      prevQ.resize(2 * N);
      for (std::size_t i = 0; i < N; ++i) {
        prevP[i] = blocks[i].P_next;
        prevQ[i] = blocks[i].Q_next;
        prevQ[N + i] = blocks[i].Q_now;
      }
      res.report.inner_distance.push_back(dist);
      if (dist <= st.eps1) break;
    }
    res.report.inner_iterations.push_back(j + 1);

    double dist = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const RlGains next = improve(blocks[i], gains.gains[i], st.gamma, ImproveWhich::disturbance);
      dist = std::max(dist, gains_distance(next, gains.gains[i], false));
      gains.gains[i] = next;
    }
    res.report.outer_distance.push_back(dist);
    res.report.outer_iterations = k + 1;
    if (dist <= st.eps) break;
  }
  res.report.converged = true;
  res.gains = std::move(gains);
  for (const XiBlocks& b : blocks) {
    res.P_next.push_back(b.P_next);
    res.Q_next.push_back(b.Q_next);
    res.Q_now.push_back(b.Q_now);
  }
  for (std::size_t i = 0; i + 1 < N; ++i)
    res.report.interval_mismatch =
        std::max(res.report.interval_mismatch, (res.Q_next[i] - res.Q_now[i + 1]).norm());
  return res;
}

}  // namespace

AlgorithmResult run_algorithm1(const DataSet& data, const PiecewiseGains& init, const Matrix& MtM,
                               const AlgorithmSettings& st) {
  if (init.intervals() != data.moments.size()) throw ShapeError("run_algorithm1: gains do not match the data");
  const int n = static_cast<int>(MtM.rows());
  const XiLayout layout(n, static_cast<int>(init.gains.front().L.rows()),
                        static_cast<int>(init.gains.front().F.rows()));
  return policy_iteration(init, st, [&](const PiecewiseGains& g, std::vector<XiBlocks>& blocks,
                                        std::vector<double>& cond) {
    cond.assign(blocks.size(), 0.0);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const RegressionBatch batch = assemble(data, g.gains[i], MtM, st.gamma, i);
      blocks[i] = unpack(solve_interval(batch, st.method), layout);
      cond[i] = batch.sigma_max / batch.sigma_min;
    }
  });
}

AlgorithmResult run_model_based(const MeanFieldJumpModel& model, const PiecewiseGains& init,
                                const AlgorithmSettings& st, int substeps) {
  return policy_iteration(init, st, [&](const PiecewiseGains& g, std::vector<XiBlocks>& blocks,
                                        std::vector<double>& cond) {
    cond.assign(blocks.size(), 1.0);
    const EvaluatedPolicy ev = pe_oracle(model, g, st.gamma, substeps);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i] = model_blocks(model, ev.P_at(i, 0.5), ev.Q_at(i, 0.5), g.gains[i]);
      blocks[i].P_next = ev.P_at(i, 1.0);
      blocks[i].Q_next = ev.Q_at(i, 1.0);
      blocks[i].Q_now = ev.Q_at(i, 0.0);
    }
  });
}

PiecewiseGains reference_gains(const MeanFieldJumpModel& model, double gamma, const std::vector<double>& grid,
                               double dt) {
  const ZeroSumSolution z = solve_zero_sum(model, gamma, dt);
  if (!z.feasible) throw InvalidArgument("reference_gains: zero-sum Riccati pair is not feasible at this gamma");
  PiecewiseGains out;
  out.grid = grid;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double mid = 0.5 * (grid[i] + grid[i + 1]);
    const double steps = mid / dt;
    if (std::abs(steps - std::round(steps)) > 1e-6)
      throw InvalidArgument("reference_gains: interval midpoints must lie on the fine grid");
    const ZeroSumGains& g = z.gains[static_cast<std::size_t>(std::lround(steps))];
    out.gains.push_back({g.L, g.Ltilde, g.F, g.Ftilde});
  }
  return out;
}

double gain_gap(const PiecewiseGains& a, const PiecewiseGains& b) {
  if (a.intervals() != b.intervals()) throw ShapeError("gain_gap: schedules differ in length");
  double d = 0.0;
  for (std::size_t i = 0; i < a.intervals(); ++i)
    d = std::max({d, gains_distance(a.gains[i], b.gains[i], true), gains_distance(a.gains[i], b.gains[i], false)});
  return d;
}

PiecewiseGains initial_gains(const MeanFieldJumpModel& model, const std::vector<double>& grid) {
  return reference_gains(model, 1e6, grid, (grid[1] - grid[0]) / 20.0);
}

MeanFieldJumpModel rl_example() {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 1.0);
  m.A << 0.0, 1.0, -1.0, -0.5;
  m.Abar << 0.2, 0.0, 0.0, 0.1;
  m.B2 << 0.0, 1.0;
  m.B2bar << 0.1, 0.2;
  m.B1 << 1.0, 0.0;
  m.B1bar << 0.2, 0.1;
  m.C << 0.2, 0.0, 0.0, 0.1;
  m.Cbar << 0.1, 0.0, 0.0, 0.1;
  m.D2 << 0.2, 0.1;
  m.D2bar << 0.1, 0.0;
  m.M = Matrix::Identity(2, 2);
  return m;
}

}  // namespace mfh
