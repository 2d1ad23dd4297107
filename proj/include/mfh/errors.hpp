#pragma once

#include <stdexcept>
#include <string>

namespace mfh {

/// Base class for every error raised by the library. Solver-level infeasibility
/// is reported as data (see RiccatiTrajectory::feasible); exceptions are for
/// malformed inputs and failed numerical contracts.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// A Σ matrix (Σ0, Σ2, Σ̃0 or Σ̃2) lost positive definiteness.
class SigmaNotPositive : public Error {
public:
  SigmaNotPositive(std::string which, double min_eig)
      : Error("sigma matrix " + which + " not positive definite (min eigenvalue " +
              std::to_string(min_eig) + ")"),
        which_(std::move(which)), min_eig_(min_eig) {}
  const std::string& which() const noexcept { return which_; }
  double min_eig() const noexcept { return min_eig_; }

private:
  std::string which_;
  double min_eig_;
};

/// The deviation or mean gain pair could not be resolved because the
/// cross-coupling system I - b2*b1 is singular.
class CouplingSingular : public Error {
public:
  using Error::Error;
};

class PositivityViolation : public Error {
public:
  PositivityViolation(double t, double min_eig)
      : Error("Lyapunov solution lost positivity at t=" + std::to_string(t) +
              " (min eigenvalue " + std::to_string(min_eig) + ")"),
        t_(t), min_eig_(min_eig) {}
  double t() const noexcept { return t_; }
  double min_eig() const noexcept { return min_eig_; }

private:
  double t_;
  double min_eig_;
};

class NoConvergence : public Error {
public:
  using Error::Error;
};

class BadBracket : public Error {
public:
  using Error::Error;
};

class DivergedPath : public Error {
public:
  DivergedPath(double t, long particle)
      : Error("simulation diverged at t=" + std::to_string(t) + " particle " +
              std::to_string(particle)),
        t_(t), particle_(particle) {}
  double t() const noexcept { return t_; }
  long particle() const noexcept { return particle_; }

private:
  double t_;
  long particle_;
};

class ZeroDisturbance : public Error {
public:
  ZeroDisturbance() : Error("disturbance energy is zero; gain ratio undefined") {}
};

class RankDeficient : public Error {
public:
  RankDeficient(long rank, long needed)
      : Error("regression matrix rank " + std::to_string(rank) + " < " +
              std::to_string(needed) + " unknowns"),
        rank_(rank), needed_(needed) {}
  long rank() const noexcept { return rank_; }
  long needed() const noexcept { return needed_; }

private:
  long rank_;
  long needed_;
};

class SingularImprovement : public Error {
public:
  using Error::Error;
};

}  // namespace mfh
