#include <random>
#include <sstream>

#include <unsupported/Eigen/MatrixFunctions>

#include "doctest.h"
#include "mfh/riccati.hpp"
#include "mfh/simd/kernels.hpp"
#include "mfh/simulate.hpp"

using namespace mfh;

namespace {

MeanFieldJumpModel drift_only() {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 1.0);
  m.A << -0.5, 0.0, 0.0, 0.3;
  m.Abar << 0.1, 0.2, -0.2, 0.0;
  m.M = Matrix::Identity(2, 2);
  return m;
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

struct BackendGuard {
  simd::Backend saved = simd::active_backend();
  ~BackendGuard() { simd::set_backend(saved); }
};

}  // namespace

TEST_CASE("zero model keeps every particle at its initial state") {
  const MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 1.0);
  NoiseSpec ns{1, 64, 0.1};
  ns.store_paths = true;
  const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::zero(), ns,
                                InitialState::deterministic(vec2(1.5, -2.0)));
  for (const Matrix& X : b.X) {
    CHECK((X.row(0).array() == 1.5).all());
    CHECK((X.row(1).array() == -2.0).all());
  }
}

TEST_CASE("drift-only ensemble mean follows the matrix exponential to first order") {
  const MeanFieldJumpModel m = drift_only();
  const Vector x0 = vec2(1.0, -1.0);
  const Vector exact = (Matrix(m.A + m.Abar) * m.T).exp() * x0;
  double prev = 1e300;
  for (double dt : {1e-2, 5e-3, 2.5e-3}) {
    const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{3, 8, dt},
                                  InitialState::deterministic(x0));
    const double err = (b.mean_x.back() - exact).norm();
    CHECK(err < 2.0 * dt);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("compensated jumps leave the ensemble mean a martingale") {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({1, 1, 1}, 1, 1.0);
  JumpAtom a;
  a.weight = 1.0;
  a.E = Matrix::Identity(1, 1);
  a.Ebar = Matrix::Zero(1, 1);
  a.F1 = a.F1bar = a.F2 = a.F2bar = Matrix::Zero(1, 1);
  m.jump_atoms.push_back(a);
  const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{11, 10000, 0.01},
                                InitialState::deterministic(Vector::Ones(1)));
  const Eigen::ArrayXd xT = b.x_final.row(0).transpose().array();
  const double mean = xT.mean();
  const double se = std::sqrt((xT - mean).square().sum() / (xT.size() - 1) / xT.size());
  CHECK(b.jump_counts[0] > 0);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("identical inputs give bit-identical bundles") {
  const MeanFieldJumpModel m = portfolio_example();
  const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
  NoiseSpec ns{42, 500, 1e-3};
  ns.store_paths = true;
  const InitialState x0{vec2(1, 1), Matrix::Identity(2, 2) * 0.1};
  const PathBundle a = simulate(m, PolicySpec::control(traj.gains), PolicySpec::disturbance(traj.gains), ns, x0);
  const PathBundle b = simulate(m, PolicySpec::control(traj.gains), PolicySpec::disturbance(traj.gains), ns, x0);
  CHECK(a.x_final == b.x_final);
  CHECK(a.int_Mx2 == b.int_Mx2);
  CHECK(a.int_v2 == b.int_v2);
  CHECK(a.jump_counts == b.jump_counts);
}

TEST_CASE("ensemble means equal the particle average and are permutation invariant") {
  const MeanFieldJumpModel m = portfolio_example();
  NoiseSpec ns{5, 257, 1e-3};
  ns.store_paths = true;
  const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::white_noise(0.5), ns,
                                InitialState{vec2(0, 1), Matrix::Identity(2, 2)});
  std::mt19937_64 rng(1);
  for (std::size_t s = 0; s < b.grid.size(); s += 25) {
    const Vector avg = b.X[s].rowwise().mean();
    CHECK((avg - b.mean_x[s]).norm() < 1e-12 * (1.0 + avg.norm()));
    std::vector<int> perm(b.particles);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix P(2, b.particles);
    for (long p = 0; p < b.particles; ++p) P.col(p) = b.X[s].col(perm[p]);
    CHECK((P.rowwise().mean() - avg).norm() < 1e-12 * (1.0 + avg.norm()));
  }
}

TEST_CASE("ensemble mean approaches the mean ODE as particles grow") {
  MeanFieldJumpModel m = drift_only();
  m.C << 0.4, 0.0, 0.1, 0.3;
  m.Cbar << 0.2, 0.0, 0.0, 0.2;
  const Vector x0 = vec2(1.0, 0.5);
  const Vector exact = (Matrix(m.A + m.Abar) * m.T).exp() * x0;
  std::vector<double> errs;
  for (long np : {100L, 1000L, 10000L}) {
    // Average the error over a few seeds to compare typical sizes.
    double e = 0.0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{seed, np, 1e-3},
                                    InitialState::deterministic(x0));
      e += (b.mean_x.back() - exact).norm();
    }
    errs.push_back(e / 8);
  }
  CHECK(errs[1] <= errs[0]);
  CHECK(errs[2] <= errs[1]);
}

TEST_CASE("empirical gain of copied and zero outputs") {
  PathBundle b;
  b.particles = 3;
  b.int_v2 = Vector::Constant(3, 2.0);
  b.int_Mx2 = Vector::Constant(3, 1.5);
  b.int_u2 = Vector::Constant(3, 0.5);
  CHECK(empirical_gain(b) == doctest::Approx(1.0));
  b.int_Mx2.setZero();
  b.int_u2.setZero();
  CHECK(empirical_gain(b) == 0.0);
  b.int_v2.setZero();
  CHECK_THROWS_AS(empirical_gain(b), ZeroDisturbance);
}

TEST_CASE("cost estimates") {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 0.5);
  const PathBundle zero = simulate(m, PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{0, 100, 0.01},
                                   InitialState::deterministic(Vector::Zero(2)));
  for (CostKind k : {CostKind::J1, CostKind::J2, CostKind::Jinf}) {
    const auto [e, se] = estimate_cost(zero, k, 3.0);
    CHECK(e == 0.0);
    CHECK(se == 0.0);
  }
  const Vector c = Vector::Constant(1, 0.7);
  const PathBundle b = simulate(m, PolicySpec::zero(), PolicySpec::constant(c), NoiseSpec{0, 50, 0.01},
                                InitialState::deterministic(Vector::Zero(2)));
  const auto [j1, se] = estimate_cost(b, CostKind::J1, 3.0);
  CHECK(j1 == doctest::Approx(9.0 * 0.49 * 0.5).epsilon(1e-12));
  CHECK(se == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(estimate_cost(b, CostKind::Jinf, 3.0).first == doctest::Approx(-j1));
}

TEST_CASE("exploding dynamics raise DivergedPath") {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({1, 1, 1}, 1, 10.0);
  m.A(0, 0) = 1000.0;
  CHECK_THROWS_AS(simulate(m, PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{0, 4, 0.1},
                           InitialState::deterministic(Vector::Ones(1))),
                  DivergedPath);
}

TEST_CASE("closed loop attenuates random disturbances below gamma") {
  const MeanFieldJumpModel m = portfolio_example();
  const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const PathBundle b = simulate(m, PolicySpec::control(traj.gains), PolicySpec::white_noise(1.0),
                                  NoiseSpec{seed, 2000, 1e-3}, InitialState::deterministic(Vector::Zero(2)));
    CHECK(empirical_gain(b) < 5.0);
  }
}

TEST_CASE("per-particle exploration has near-zero ensemble mean, common exploration moves it") {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({1, 1, 1}, 1, 1.0);
  PolicySpec u;
  u.exploration.per_particle = {{{1.0, 3.0, 0.0}, {0.5, 7.0, 0.0}}};
  u.exploration.common = {{{0.3, 2.0, 0.4}}};
  const PathBundle b = simulate(m, u, PolicySpec::zero(), NoiseSpec{9, 20000, 0.01},
                                InitialState::deterministic(Vector::Zero(1)));
  for (std::size_t s = 0; s < b.grid.size(); s += 10) {
    const double common = 0.3 * std::sin(2.0 * b.grid[s] + 0.4);
    CHECK(std::abs(b.mean_u[s](0) - common) < 0.05);
  }
  // E[a² sin²] = a²/2 per term.
  CHECK(b.int_u2.mean() == doctest::Approx(0.5 + 0.125 + 0.045).epsilon(0.1));
}

TEST_CASE("SIMD kernels agree with the scalar reference") {
  if (!simd::avx2_available()) return;
  const simd::Kernels& s = simd::scalar_kernels();
  const simd::Kernels& v = *simd::avx2_kernels();
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (long np : {1L, 3L, 4L, 17L, 1001L}) {
    const int rows = 3, cols = 5;
    std::vector<double> G(rows * cols), in(cols * np), bias(rows), a(rows * np), b(rows * np), sc(np);
    for (auto* vec : {&G, &in, &bias, &a, &sc})
      for (double& x : *vec) x = nd(rng);
    G[4] = 0.0;
    b = a;
    s.affine(G.data(), rows, cols, in.data(), bias.data(), a.data(), np, true);
    v.affine(G.data(), rows, cols, in.data(), bias.data(), b.data(), np, true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
    s.affine(G.data(), rows, cols, in.data(), nullptr, a.data(), np, false);
    v.affine(G.data(), rows, cols, in.data(), nullptr, b.data(), np, false);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
    s.scale_add(sc.data(), in.data(), a.data(), rows, np);
    v.scale_add(sc.data(), in.data(), b.data(), rows, np);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-13));
    std::vector<double> acc1(np, 1.0), acc2(np, 1.0);
    s.accum_sumsq(in.data(), cols, np, 0.25, acc1.data());
    v.accum_sumsq(in.data(), cols, np, 0.25, acc2.data());
    for (long p = 0; p < np; ++p) CHECK(acc1[p] == doctest::Approx(acc2[p]).epsilon(1e-13));
    std::vector<double> s1(cols), s2(cols);
    s.row_sums(in.data(), cols, np, s1.data());
    v.row_sums(in.data(), cols, np, s2.data());
    for (int r = 0; r < cols; ++r) CHECK(s1[r] == doctest::Approx(s2[r]).epsilon(1e-12));
  }
}

TEST_CASE("simulation results agree across kernel backends") {
  if (!simd::avx2_available()) return;
  BackendGuard guard;
  const MeanFieldJumpModel m = portfolio_example();
  const RiccatiTrajectory traj = solve_gdre(m, 5.0, 1e-3);
  const auto run = [&] {
    return simulate(m, PolicySpec::control(traj.gains), PolicySpec::disturbance(traj.gains),
                    NoiseSpec{8, 1000, 1e-3}, InitialState::deterministic(vec2(1, 1)));
  };
  simd::set_backend(simd::Backend::scalar);
  const PathBundle a = run();
  simd::set_backend(simd::Backend::avx2);
  const PathBundle b = run();
  CHECK((a.x_final - b.x_final).norm() < 1e-9 * (1.0 + a.x_final.norm()));
  CHECK(estimate_cost(a, CostKind::J1, 5.0).first ==
        doctest::Approx(estimate_cost(b, CostKind::J1, 5.0).first).epsilon(1e-10));
}

TEST_CASE("means CSV layout") {
  const PathBundle b = simulate(drift_only(), PolicySpec::zero(), PolicySpec::zero(), NoiseSpec{0, 4, 0.1},
                                InitialState::deterministic(vec2(1, 1)));
  std::ostringstream out;
  write_means_csv(b, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "t,mean_x1,mean_x2,mean_u1,mean_v1");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 11);
}
