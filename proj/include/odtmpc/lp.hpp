#pragma once

#include "odtmpc/types.hpp"

namespace odtmpc {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  double objective = 0.0;
};

/// maximize c'x subject to A x <= b with x free. Dense two-phase tableau
/// simplex with Bland's rule; meant for the small polyhedral problems that
/// arise here (a handful of variables, at most a few hundred rows).
LpResult solve_lp(const Vector& c, const Matrix& A, const Vector& b);

struct ChebyshevBall {
  bool feasible = false;
  Vector center;
  double radius = 0.0;
};

/// Largest Euclidean ball inside {x : A x <= b}. The radius is capped at
/// `radius_cap` so unbounded sets still return a finite certificate.
ChebyshevBall chebyshev_ball(const Matrix& A, const Vector& b, double radius_cap = 1e3);

/// Scales every row of (A, b) to unit Euclidean norm; zero rows are dropped
/// when consistent (b >= 0). Returns false if some zero row is violated,
/// meaning the set is empty.
bool normalize_rows(Matrix& A, Vector& b, double zero_tol = 1e-12);

/// Removes rows implied by the others (LP-based). Rows must describe a set
/// with nonempty interior.
void remove_redundant_rows(Matrix& A, Vector& b, double tol = 1e-9);

}  // namespace odtmpc
