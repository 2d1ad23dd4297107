#include "mfh/simulate.hpp"

#include <cmath>
#include <numbers>

#include "mfh/csv.hpp"
#include "mfh/random.hpp"
#include "mfh/simd/kernels.hpp"

namespace mfh {

PolicySpec PolicySpec::zero() { return {}; }

PolicySpec PolicySpec::constant(const Vector& c) {
  PolicySpec p;
  p.offset = c;
  return p;
}

PolicySpec PolicySpec::feedback(std::function<std::pair<Matrix, Matrix>(double)> gains) {
  PolicySpec p;
  p.kind = Kind::gain_schedule;
  p.gains = std::move(gains);
  return p;
}

PolicySpec PolicySpec::control(const GainSchedule& s) {
  return feedback([s](double t) {
    const GainTuple g = s.at(t);
    return std::make_pair(g.K2, g.K2_sum);
  });
}

PolicySpec PolicySpec::disturbance(const GainSchedule& s) {
  return feedback([s](double t) {
    const GainTuple g = s.at(t);
    return std::make_pair(g.K1, g.K1_sum);
  });
}

PolicySpec PolicySpec::white_noise(double amplitude) {
  PolicySpec p;
  p.exploration.white = amplitude;
  return p;
}

namespace {

using RMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum Channel : std::uint64_t {
  kBrownian = 1,
  kInit = 2,
  kWhite = 10,    // + 0 for u, + 1 for v, then row offset
  kPhase = 1000,  // + 0 for u, + 500 for v, then term index
  kJump = 5000,
};

// Evaluates one player's input for all particles at one step.
class PolicyEval {
public:
  PolicyEval(const PolicySpec& spec, int dim, int n, long np, std::uint64_t seed,
             std::uint64_t player)
      : spec_(spec), dim_(dim), n_(n), np_(np), seed_(seed), player_(player) {
    const auto& pp = spec.exploration.per_particle;
    if (!pp.empty() && static_cast<int>(pp.size()) != dim)
      throw ShapeError("exploration: per_particle rows must match the input dimension");
    if (!spec.exploration.common.empty() && static_cast<int>(spec.exploration.common.size()) != dim)
      throw ShapeError("exploration: common rows must match the input dimension");
    if (spec.offset.size() != 0 && spec.offset.size() != dim)
      throw ShapeError("policy offset has the wrong length");
    for (int r = 0; r < static_cast<int>(pp.size()); ++r)
      for (const Sinusoid& s : pp[r]) terms_.push_back({r, s});
    // Rows 2j and 2j+1 of Z hold sin(φ) and cos(φ) of term j per particle.
    Z_.resize(2 * static_cast<Eigen::Index>(terms_.size()), np);
    const std::uint64_t stream =
        spec.exploration.phase_stream >= 0 ? static_cast<std::uint64_t>(spec.exploration.phase_stream) : player;
    for (std::size_t j = 0; j < terms_.size(); ++j) {
      for (long p = 0; p < np; ++p) {
        const double phi = 2.0 * std::numbers::pi *
                           uniform(seed, static_cast<std::uint64_t>(p), 0, kPhase + 500 * stream + j);
        Z_(2 * j, p) = std::sin(phi);
        Z_(2 * j + 1, p) = std::cos(phi);
      }
    }
  }

  void operator()(double t, long step, const RMatrix& X, const Vector& xbar, RMatrix& out) const {
    const simd::Kernels& k = simd::kernels();
    Vector bias = Vector::Zero(dim_);
    if (spec_.offset.size() == dim_) bias += spec_.offset;
    for (int r = 0; r < static_cast<int>(spec_.exploration.common.size()); ++r)
      for (const Sinusoid& s : spec_.exploration.common[r])
        bias(r) += s.amplitude * std::sin(s.omega * t + s.phase);

    switch (spec_.kind) {
      case PolicySpec::Kind::zero:
        k.affine(nullptr, dim_, 0, nullptr, bias.data(), out.data(), np_, false);
        break;
      case PolicySpec::Kind::gain_schedule: {
        const auto [K, Ksum] = spec_.gains(t);
        if (K.rows() != dim_ || K.cols() != n_ || Ksum.rows() != dim_ || Ksum.cols() != n_)
          throw ShapeError("policy gains have the wrong shape");
        bias += (Ksum - K) * xbar;
        const RMatrix Kr = K;
        k.affine(Kr.data(), dim_, n_, X.data(), bias.data(), out.data(), np_, false);
        break;
      }
      case PolicySpec::Kind::external: {
        Matrix res(dim_, np_);
        spec_.external(t, Matrix(X), res);
        if (res.rows() != dim_ || res.cols() != np_) throw ShapeError("external policy output shape");
        out = res;
        k.affine(nullptr, dim_, 0, nullptr, bias.data(), out.data(), np_, true);
        break;
      }
    }

    if (!terms_.empty()) {
      RMatrix G = RMatrix::Zero(dim_, Z_.rows());
      for (std::size_t j = 0; j < terms_.size(); ++j) {
        const auto& [r, s] = terms_[j];
        // a sin(ωt + φ) = a cos(ωt) sin φ + a sin(ωt) cos φ
        G(r, 2 * j) = s.amplitude * std::cos(s.omega * t);
        G(r, 2 * j + 1) = s.amplitude * std::sin(s.omega * t);
      }
      k.affine(G.data(), dim_, static_cast<int>(Z_.rows()), Z_.data(), nullptr, out.data(), np_, true);
    }

    if (spec_.exploration.white != 0.0) {
      for (int r = 0; r < dim_; ++r)
        for (long p = 0; p < np_; ++p)
          out(r, p) += spec_.exploration.white *
                       normal(seed_, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(step),
                              kWhite + 2 * static_cast<std::uint64_t>(r) + player_);
    }
  }

private:
  const PolicySpec& spec_;
  int dim_, n_;
  long np_;
  std::uint64_t seed_, player_;
  std::vector<std::pair<int, Sinusoid>> terms_;
  RMatrix Z_;
};

Vector row_means(const RMatrix& X) {
  Vector s(X.rows());
  simd::kernels().row_sums(X.data(), static_cast<int>(X.rows()), X.cols(), s.data());
  return s / static_cast<double>(X.cols());
}

}  // namespace

PathBundle simulate(const MeanFieldJumpModel& model, const PolicySpec& u_policy,
                    const PolicySpec& v_policy, const NoiseSpec& noise, const InitialState& x0) {
  require_valid(model);
  const auto [n, nu, nv] = model.dims;
  const long np = noise.particles;
  if (np < 1) throw InvalidArgument("simulate: particle count must be positive");
  if (x0.mean.size() != n) throw ShapeError("simulate: initial mean has the wrong length");
  const double t1 = noise.t1 < 0.0 ? model.T : noise.t1;
  std::vector<double> grid = make_grid(t1 - noise.t0, noise.dt);
  for (double& t : grid) t += noise.t0;
  const std::size_t N = grid.size() - 1;
  const simd::Kernels& k = simd::kernels();

  // Row-major copies so that each kernel reads G(r, c) at r * cols + c.
  const RMatrix A = model.A, B1 = model.B1, B2 = model.B2, C = model.C, D1 = model.D1,
                D2 = model.D2, M = model.M;
  const std::size_t na = model.jump_atoms.size();
  std::vector<RMatrix> E(na), F1(na), F2(na);
  for (std::size_t i = 0; i < na; ++i) {
    E[i] = model.jump_atoms[i].E;
    F1[i] = model.jump_atoms[i].F1;
    F2[i] = model.jump_atoms[i].F2;
  }

  RMatrix X(n, np), U(nu, np), V(nv, np), drift(n, np), diff(n, np), MX(M.rows(), np);
  std::vector<RMatrix> jump(na, RMatrix(n, np));
  {
    Matrix L;
    if (x0.cov.size() != 0) {
      if (x0.cov.rows() != n || x0.cov.cols() != n) throw ShapeError("simulate: initial covariance shape");
      Eigen::LLT<Matrix> llt(x0.cov);
      L = llt.info() == Eigen::Success ? Matrix(llt.matrixL()) : Matrix(x0.cov.llt().matrixL());
    }
    for (long p = 0; p < np; ++p) {
      Vector xi = x0.mean;
      if (L.size() != 0) {
        Vector z(n);
        for (int r = 0; r < n; ++r) z(r) = normal(noise.seed, static_cast<std::uint64_t>(p), r, kInit);
        xi += L * z;
      }
      X.col(p) = xi;
    }
  }

  const PolicyEval eval_u(u_policy, nu, n, np, noise.seed, 0);
  const PolicyEval eval_v(v_policy, nv, n, np, noise.seed, 1);

  PathBundle b;
  b.grid = grid;
  b.n = n;
  b.nu = nu;
  b.nv = nv;
  b.particles = np;
  b.int_Mx2 = Vector::Zero(np);
  b.int_u2 = Vector::Zero(np);
  b.int_v2 = Vector::Zero(np);
  b.jump_counts.assign(na, 0);

  Vector ones = Vector::Ones(np), xi(np), comp(np);
  const double sqdt = std::sqrt(noise.dt);

  for (std::size_t s = 0; s <= N; ++s) {
    const double t = grid[s];
    const Vector xbar = row_means(X);
    eval_u(t, static_cast<long>(s), X, xbar, U);
    eval_v(t, static_cast<long>(s), X, xbar, V);
    const Vector ubar = row_means(U), vbar = row_means(V);

    const double w = (s == 0 || s == N) ? 0.5 * noise.dt : noise.dt;
    k.affine(M.data(), static_cast<int>(M.rows()), n, X.data(), nullptr, MX.data(), np, false);
    k.accum_sumsq(MX.data(), static_cast<int>(M.rows()), np, w, b.int_Mx2.data());
    k.accum_sumsq(U.data(), nu, np, w, b.int_u2.data());
    k.accum_sumsq(V.data(), nv, np, w, b.int_v2.data());
    b.mean_x.push_back(xbar);
    b.mean_u.push_back(ubar);
    b.mean_v.push_back(vbar);
    if (noise.store_paths) {
      b.X.emplace_back(X);
      b.U.emplace_back(U);
      b.V.emplace_back(V);
    }
    if (s == N) break;

    // Coefficients of every channel are evaluated at the pre-step state.
    const Vector c_drift = noise.dt * (model.Abar * xbar + model.B2bar * ubar + model.B1bar * vbar);
    const Vector c_diff = model.Cbar * xbar + model.D2bar * ubar + model.D1bar * vbar;
    const RMatrix Adt = noise.dt * A, B2dt = noise.dt * B2, B1dt = noise.dt * B1;
    k.affine(Adt.data(), n, n, X.data(), c_drift.data(), drift.data(), np, false);
    k.affine(B2dt.data(), n, nu, U.data(), nullptr, drift.data(), np, true);
    k.affine(B1dt.data(), n, nv, V.data(), nullptr, drift.data(), np, true);
    k.affine(C.data(), n, n, X.data(), c_diff.data(), diff.data(), np, false);
    k.affine(D2.data(), n, nu, U.data(), nullptr, diff.data(), np, true);
    k.affine(D1.data(), n, nv, V.data(), nullptr, diff.data(), np, true);
    for (std::size_t i = 0; i < na; ++i) {
      const JumpAtom& a = model.jump_atoms[i];
      const Vector c_jump = a.Ebar * xbar + a.F2bar * ubar + a.F1bar * vbar;
      k.affine(E[i].data(), n, n, X.data(), c_jump.data(), jump[i].data(), np, false);
      k.affine(F2[i].data(), n, nu, U.data(), nullptr, jump[i].data(), np, true);
      k.affine(F1[i].data(), n, nv, V.data(), nullptr, jump[i].data(), np, true);
    }

    for (long p = 0; p < np; ++p)
      xi(p) = sqdt * normal(noise.seed, static_cast<std::uint64_t>(p), s, kBrownian);
    k.scale_add(ones.data(), drift.data(), X.data(), n, np);
    k.scale_add(xi.data(), diff.data(), X.data(), n, np);
    for (std::size_t i = 0; i < na; ++i) {
      const double lambda = model.jump_atoms[i].weight * noise.dt;
      if (lambda == 0.0) continue;
      for (long p = 0; p < np; ++p) {
        const unsigned cnt = poisson(lambda, uniform(noise.seed, static_cast<std::uint64_t>(p), s, kJump + i));
        b.jump_counts[i] += cnt;
        comp(p) = static_cast<double>(cnt) - lambda;
      }
      k.scale_add(comp.data(), jump[i].data(), X.data(), n, np);
    }

    for (long p = 0; p < np; ++p)
      for (int r = 0; r < n; ++r) {
        const double v = X(r, p);
        if (!std::isfinite(v) || std::abs(v) > 1e150) throw DivergedPath(grid[s + 1], p);
      }
  }
  b.x_final = X;
  return b;
}

double empirical_gain(const PathBundle& b) {
  const double z = (b.int_Mx2 + b.int_u2).mean();
  const double v = b.int_v2.mean();
  if (!(v > 0.0)) throw ZeroDisturbance();
  return std::sqrt(z) / std::sqrt(v);
}

std::pair<double, double> estimate_cost(const PathBundle& b, CostKind kind, double gamma) {
  const long np = b.particles;
  if (np == 0) return {0.0, 0.0};
  const Vector z = b.int_Mx2 + b.int_u2;
  Vector c;
  switch (kind) {
    case CostKind::J2: c = z; break;
    case CostKind::J1: c = gamma * gamma * b.int_v2 - z; break;
    case CostKind::Jinf: c = z - gamma * gamma * b.int_v2; break;
  }
  const double mean = c.mean();
  if (np < 2) return {mean, 0.0};
  const double var = (c.array() - mean).square().sum() / static_cast<double>(np - 1);
  return {mean, std::sqrt(var / static_cast<double>(np))};
}

void write_means_csv(const PathBundle& b, std::ostream& out) {
  std::vector<std::string> head{"t"};
  for (int i = 0; i < b.n; ++i) head.push_back("mean_x" + std::to_string(i + 1));
  for (int i = 0; i < b.nu; ++i) head.push_back("mean_u" + std::to_string(i + 1));
  for (int i = 0; i < b.nv; ++i) head.push_back("mean_v" + std::to_string(i + 1));
  write_csv_header(out, head);
  for (std::size_t s = 0; s < b.grid.size(); ++s) {
    std::vector<double> row{b.grid[s]};
    for (int i = 0; i < b.n; ++i) row.push_back(b.mean_x[s](i));
    for (int i = 0; i < b.nu; ++i) row.push_back(b.mean_u[s](i));
    for (int i = 0; i < b.nv; ++i) row.push_back(b.mean_v[s](i));
    write_csv_row(out, row);
  }
}

}  // namespace mfh
