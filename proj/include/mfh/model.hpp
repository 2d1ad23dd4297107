#pragma once

// System data for linear mean-field stochastic systems with Poisson jumps:
//
//   dx = (A x + Ā E[x] + B2 u + B̄2 E[u] + B1 v + B̄1 E[v]) dt
//      + (C x + C̄ E[x] + D2 u + D̄2 E[u] + D1 v + D̄1 E[v]) dW
//      + Σ_atoms (E x + Ē E[x] + F2 u + F̄2 E[u] + F1 v + F̄1 E[v]) (dN - weight dt)
//   z  = (M x, u)
//
// u is the control, v the disturbance. Coefficients are constant in time; the
// jump measure is a finite list of atoms.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mfh/errors.hpp"

namespace mfh {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Dims {
  int n = 0;   // state
  int nu = 0;  // control
  int nv = 0;  // disturbance
};

struct JumpAtom {
  double weight = 0.0;  // ν-mass of the atom
  Matrix E, Ebar;       // n×n
  Matrix F1, F1bar;     // n×nv
  Matrix F2, F2bar;     // n×nu
};

struct MeanFieldJumpModel {
  Dims dims;
  Matrix A, Abar, C, Cbar;        // n×n
  Matrix B1, B1bar, D1, D1bar;    // n×nv
  Matrix B2, B2bar, D2, D2bar;    // n×nu
  Matrix M;                       // m×n output weight
  std::vector<JumpAtom> jump_atoms;
  double T = 1.0;

  /// Zero model (all coefficients zero, M = 0, no atoms) of the given shape.
  static MeanFieldJumpModel zeros(Dims dims, int output_rows, double T);
};

struct DisturbanceAtom {
  double weight = 0.0;
  Matrix E, Ebar;  // n×n
  Matrix F, Fbar;  // n×nv
};

/// Disturbance-driven system used by the bounded real lemma. The output is
/// z1 = M x + M̄ E[x]; M̄ is zero for an open-loop system and carries the mean
/// feedback K̃2 after close_loop().
struct DisturbanceOnlyModel {
  int n = 0;
  int nv = 0;
  Matrix A, Abar, C, Cbar;  // n×n
  Matrix B, Bbar, D, Dbar;  // n×nv
  std::vector<DisturbanceAtom> jump_atoms;
  Matrix M, Mbar;  // m×n
  double T = 1.0;
};

/// Coefficients of a disturbance-only system as a function of time.
using DisturbanceModelFn = std::function<DisturbanceOnlyModel(double t)>;

/// Gain values at one instant. The *_sum members hold K + K̃, the gain that
/// acts on the ensemble mean.
struct GainTuple {
  Matrix K1, K1_sum;  // nv×n
  Matrix K2, K2_sum;  // nu×n
};

struct GainSchedule {
  std::vector<double> grid;
  std::vector<Matrix> K1, K1_sum;
  std::vector<Matrix> K2, K2_sum;

  std::size_t size() const { return grid.size(); }
  GainTuple operator[](std::size_t k) const { return {K1[k], K1_sum[k], K2[k], K2_sum[k]}; }
  void push_back(double t, const GainTuple& g);
  /// Piecewise-linear interpolation on the grid; clamps outside [t0, tN].
  GainTuple at(double t) const;
};

struct Violation {
  std::string field;
  std::string message;
};

/// Every shape and sign violation of the model's invariants; empty iff valid.
std::vector<Violation> validate(const MeanFieldJumpModel& model);

/// Throws ShapeError listing the violations when the model is invalid.
void require_valid(const MeanFieldJumpModel& model);

/// Named field of a JumpAtom, including the coefficient sums that appear in the
/// mean equations.
enum class AtomField { E, Ebar, F1, F1bar, F2, F2bar, EplusEbar, F1plusF1bar, F2plusF2bar };

Matrix atom_field(const JumpAtom& atom, AtomField field);

/// Σ_i weight_i · left(atom_i)' P right(atom_i). The selectors are callables
/// mapping an atom to a matrix; a zero matrix of the right shape is returned for
/// an empty atom list.
template <class Atom, class Left, class Right>
Matrix jump_integral(std::span<const Atom> atoms, const Matrix& P, Left&& left, Right&& right,
                     Eigen::Index rows, Eigen::Index cols) {
  Matrix acc = Matrix::Zero(rows, cols);
  for (const Atom& atom : atoms) {
    if (atom.weight == 0.0) continue;
    const Matrix l = left(atom);
    const Matrix r = right(atom);
    if (l.rows() != P.rows() || r.rows() != P.cols() || l.cols() != rows || r.cols() != cols)
      throw ShapeError("jump_integral: selector shapes incompatible with P");
    acc.noalias() += atom.weight * (l.transpose() * P * r);
  }
  return acc;
}

/// Enum-selector convenience form; the result shape follows the selected
/// fields of the first atom (or is inferred from P when `atoms` is empty and
/// both selectors are n×n fields).
Matrix jump_integral(std::span<const JumpAtom> atoms, const Matrix& P, AtomField left,
                     AtomField right, const Dims& dims);

/// Substitutes u = K2 (x - E x) + K2_sum E x into the model and returns the
/// v-driven closed-loop system. The output stacks [M; K2] on x and [0; K̃2] on
/// E x so that |z|² keeps the control energy.
DisturbanceOnlyModel close_loop(const MeanFieldJumpModel& model, const Matrix& K2,
                                const Matrix& K2_sum);

/// close_loop() evaluated along an interpolated gain schedule.
DisturbanceModelFn close_loop(const MeanFieldJumpModel& model, const GainSchedule& gains);

/// Time grid 0 = t0 < ... < tN = T with spacing dt. Throws InvalidArgument when
/// dt does not divide T within 1e-9.
std::vector<double> make_grid(double T, double dt);

/// Copy of the model with the jump atoms removed.
MeanFieldJumpModel without_jumps(const MeanFieldJumpModel& model);

/// Two-dimensional portfolio example: T = 0.1, one jump atom θ = 1 of mass 1.
MeanFieldJumpModel portfolio_example();

}  // namespace mfh
