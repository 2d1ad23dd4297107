#include "mfh/model.hpp"

#include <cmath>
#include <sstream>

namespace mfh {

MeanFieldJumpModel MeanFieldJumpModel::zeros(Dims d, int output_rows, double T) {
  MeanFieldJumpModel m;
  m.dims = d;
  m.A = m.Abar = m.C = m.Cbar = Matrix::Zero(d.n, d.n);
  m.B1 = m.B1bar = m.D1 = m.D1bar = Matrix::Zero(d.n, d.nv);
  m.B2 = m.B2bar = m.D2 = m.D2bar = Matrix::Zero(d.n, d.nu);
  m.M = Matrix::Zero(output_rows, d.n);
  m.T = T;
  return m;
}

void GainSchedule::push_back(double t, const GainTuple& g) {
  grid.push_back(t);
  K1.push_back(g.K1);
  K1_sum.push_back(g.K1_sum);
  K2.push_back(g.K2);
  K2_sum.push_back(g.K2_sum);
}

GainTuple GainSchedule::at(double t) const {
  if (grid.empty()) throw InvalidArgument("GainSchedule::at on empty schedule");
  if (t <= grid.front()) return (*this)[0];
  if (t >= grid.back()) return (*this)[grid.size() - 1];
  auto it = std::upper_bound(grid.begin(), grid.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - grid.begin());
  const std::size_t lo = hi - 1;
  const double w = (t - grid[lo]) / (grid[hi] - grid[lo]);
  auto lerp = [w](const Matrix& a, const Matrix& b) -> Matrix { return (1.0 - w) * a + w * b; };
  return {lerp(K1[lo], K1[hi]), lerp(K1_sum[lo], K1_sum[hi]), lerp(K2[lo], K2[hi]),
          lerp(K2_sum[lo], K2_sum[hi])};
}

namespace {

void check_shape(std::vector<Violation>& out, const std::string& name, const Matrix& m,
                 Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream msg;
    msg << "expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
    out.push_back({name, msg.str()});
  } else if (!m.allFinite()) {
    out.push_back({name, "non-finite entry"});
  }
}

}  // namespace

std::vector<Violation> validate(const MeanFieldJumpModel& model) {
  std::vector<Violation> out;
  const auto [n, nu, nv] = model.dims;
  if (n <= 0) out.push_back({"dims.n", "must be positive"});
  if (nu <= 0) out.push_back({"dims.nu", "must be positive"});
  if (nv <= 0) out.push_back({"dims.nv", "must be positive"});
  if (!out.empty()) return out;

  check_shape(out, "A", model.A, n, n);
  check_shape(out, "Abar", model.Abar, n, n);
  check_shape(out, "C", model.C, n, n);
  check_shape(out, "Cbar", model.Cbar, n, n);
  check_shape(out, "B1", model.B1, n, nv);
  check_shape(out, "B1bar", model.B1bar, n, nv);
  check_shape(out, "D1", model.D1, n, nv);
  check_shape(out, "D1bar", model.D1bar, n, nv);
  check_shape(out, "B2", model.B2, n, nu);
  check_shape(out, "B2bar", model.B2bar, n, nu);
  check_shape(out, "D2", model.D2, n, nu);
  check_shape(out, "D2bar", model.D2bar, n, nu);
  if (model.M.cols() != n || model.M.rows() < 1)
    out.push_back({"M", "expected m x " + std::to_string(n) + " with m >= 1"});
  if (!(model.T > 0.0) || !std::isfinite(model.T)) out.push_back({"T", "must be positive"});

  for (std::size_t i = 0; i < model.jump_atoms.size(); ++i) {
    const JumpAtom& a = model.jump_atoms[i];
    const std::string p = "jump_atoms[" + std::to_string(i) + "].";
    if (!(a.weight >= 0.0) || !std::isfinite(a.weight))
      out.push_back({p + "weight", "must be finite and nonnegative"});
    check_shape(out, p + "E", a.E, n, n);
    check_shape(out, p + "Ebar", a.Ebar, n, n);
    check_shape(out, p + "F1", a.F1, n, nv);
    check_shape(out, p + "F1bar", a.F1bar, n, nv);
    check_shape(out, p + "F2", a.F2, n, nu);
    check_shape(out, p + "F2bar", a.F2bar, n, nu);
  }
  return out;
}

void require_valid(const MeanFieldJumpModel& model) {
  const auto v = validate(model);
  if (v.empty()) return;
  std::ostringstream msg;
  msg << "invalid model:";
  for (const auto& e : v) msg << " [" << e.field << ": " << e.message << "]";
  throw ShapeError(msg.str());
}

Matrix atom_field(const JumpAtom& atom, AtomField field) {
  switch (field) {
    case AtomField::E: return atom.E;
    case AtomField::Ebar: return atom.Ebar;
    case AtomField::F1: return atom.F1;
    case AtomField::F1bar: return atom.F1bar;
    case AtomField::F2: return atom.F2;
    case AtomField::F2bar: return atom.F2bar;
    case AtomField::EplusEbar: return atom.E + atom.Ebar;
    case AtomField::F1plusF1bar: return atom.F1 + atom.F1bar;
    case AtomField::F2plusF2bar: return atom.F2 + atom.F2bar;
  }
  throw InvalidArgument("unknown atom field");
}

namespace {

Eigen::Index field_cols(AtomField f, const Dims& d) {
  switch (f) {
    case AtomField::E:
    case AtomField::Ebar:
    case AtomField::EplusEbar: return d.n;
    case AtomField::F1:
    case AtomField::F1bar:
    case AtomField::F1plusF1bar: return d.nv;
    default: return d.nu;
  }
}

}  // namespace

Matrix jump_integral(std::span<const JumpAtom> atoms, const Matrix& P, AtomField left,
                     AtomField right, const Dims& dims) {
  if (P.rows() != dims.n || P.cols() != dims.n)
    throw ShapeError("jump_integral: P must be n x n");
  return jump_integral(
      atoms, P, [left](const JumpAtom& a) { return atom_field(a, left); },
      [right](const JumpAtom& a) { return atom_field(a, right); }, field_cols(left, dims),
      field_cols(right, dims));
}

DisturbanceOnlyModel close_loop(const MeanFieldJumpModel& m, const Matrix& K2,
                                const Matrix& K2_sum) {
  const auto [n, nu, nv] = m.dims;
  if (K2.rows() != nu || K2.cols() != n || K2_sum.rows() != nu || K2_sum.cols() != n)
    throw ShapeError("close_loop: gains must be nu x n");
  const Matrix K2t = K2_sum - K2;

  DisturbanceOnlyModel d;
  d.n = n;
  d.nv = nv;
  d.T = m.T;
  d.A = m.A + m.B2 * K2;
  d.Abar = m.Abar + m.B2 * K2t + m.B2bar * K2_sum;
  d.C = m.C + m.D2 * K2;
  d.Cbar = m.Cbar + m.D2 * K2t + m.D2bar * K2_sum;
  d.B = m.B1;
  d.Bbar = m.B1bar;
  d.D = m.D1;
  d.Dbar = m.D1bar;
  for (const JumpAtom& a : m.jump_atoms) {
    DisturbanceAtom da;
    da.weight = a.weight;
    da.E = a.E + a.F2 * K2;
    da.Ebar = a.Ebar + a.F2 * K2t + a.F2bar * K2_sum;
    da.F = a.F1;
    da.Fbar = a.F1bar;
    d.jump_atoms.push_back(std::move(da));
  }
  const Eigen::Index mr = m.M.rows();
  d.M = Matrix::Zero(mr + nu, n);
  d.M.topRows(mr) = m.M;
  d.M.bottomRows(nu) = K2;
  d.Mbar = Matrix::Zero(mr + nu, n);
  d.Mbar.bottomRows(nu) = K2t;
  return d;
}

DisturbanceModelFn close_loop(const MeanFieldJumpModel& model, const GainSchedule& gains) {
  return [model, gains](double t) {
    const GainTuple g = gains.at(t);
    return close_loop(model, g.K2, g.K2_sum);
  };
}

std::vector<double> make_grid(double T, double dt) {
  if (!(dt > 0.0) || !(T > 0.0)) throw InvalidArgument("make_grid: T and dt must be positive");
  const double steps = T / dt;
  const double rounded = std::round(steps);
  if (rounded < 1.0 || std::abs(steps - rounded) * dt > 1e-9)
    throw InvalidArgument("make_grid: dt does not divide T");
  const auto N = static_cast<std::size_t>(rounded);
  std::vector<double> grid(N + 1);
  for (std::size_t k = 0; k <= N; ++k) grid[k] = T * static_cast<double>(k) / static_cast<double>(N);
  return grid;
}

MeanFieldJumpModel without_jumps(const MeanFieldJumpModel& model) {
  MeanFieldJumpModel out = model;
  out.jump_atoms.clear();
  return out;
}

MeanFieldJumpModel portfolio_example() {
  MeanFieldJumpModel m = MeanFieldJumpModel::zeros({2, 1, 1}, 2, 0.1);
  m.M = Matrix::Identity(2, 2);
  m.A << 1, 2, -2, 1;
  m.Abar << 1, -2, 2, 1;
  m.B1 << 1, 1;
  m.B1bar << 0.5, -1;
  m.B2 << 1, 1;
  m.B2bar << 2, -1;
  m.C << 1, 2, 2, 1;
  m.Cbar << 1, 2, 2, 1;
  m.D1 << 2, 1;
  m.D1bar << 1, 1;
  m.D2 << 2, -2;
  m.D2bar << -2, 2;

  const double theta = 1.0;
  JumpAtom atom;
  atom.weight = 1.0;
  atom.E.resize(2, 2);
  atom.E << -1, 1, 3, 1;
  atom.Ebar.resize(2, 2);
  atom.Ebar << -1, 0, 3, 1;
  atom.F1.resize(2, 1);
  atom.F1 << 2, 1;
  atom.F1bar.resize(2, 1);
  atom.F1bar << 2, 2;
  atom.F2.resize(2, 1);
  atom.F2 << 2, 1;
  atom.F2bar.resize(2, 1);
  atom.F2bar << 2, 2;
  atom.E *= theta;
  atom.Ebar *= theta;
  atom.F1 *= theta;
  atom.F1bar *= theta;
  atom.F2 *= theta;
  atom.F2bar *= theta;
  m.jump_atoms.push_back(std::move(atom));
  return m;
}

}  // namespace mfh
