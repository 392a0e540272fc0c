#pragma once

#include "odtmpc/problem.hpp"
#include "odtmpc/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace odtmpc {

/// One piece of the explicit MPC law: u0 = F x + g on {x : H x <= l}.
struct RegionLaw {
  Matrix H;  ///< unit-norm rows, redundant rows removed
  Vector l;
  Matrix F;  ///< m x n
  Vector g;  ///< m
  /// Active-set labels of the candidates merged into this region. One
  /// character per stacked input: '-' at lower bound, '0' free, '+' at upper.
  std::vector<std::string> active_sets;
  Vector center;        ///< Chebyshev center
  double radius = 0.0;  ///< Chebyshev radius

  bool contains(const Vector& x, double tol = 1e-9) const;
  Vector evaluate(const Vector& x) const { return F * x + g; }
};

struct ExplicitOptions {
  /// Regions are intersected with this box; without one they live in R^n.
  std::optional<StateBox> domain;
  /// Upper limit on the number of candidate active sets (3^12 by default).
  std::size_t max_candidates = 531441;
  /// Merge regions sharing the same first-input law when their union is convex.
  bool merge_equal_laws = true;
  double min_radius = 1e-9;
};

/// Enumerates input-bound active sets of the condensed QP and returns the
/// full-dimensional critical regions with their affine laws, in enumeration
/// order. Requires infinite state bounds. Throws TooLarge past the cap.
std::vector<RegionLaw> enumerate_explicit(const MpcProblem& problem, const ExplicitOptions& options = {});

/// Law of the first region containing x (tolerance on the inequalities).
/// Throws NotCovered when no region contains x.
Vector eval_explicit(const std::vector<RegionLaw>& laws, const Vector& x, double tol = 1e-9);

/// Max spectral norm of the region gains, the Lipschitz constant of the law.
double max_gain_norm(const std::vector<RegionLaw>& laws);

/// Convexity of a union via the envelope test; used for merging.
bool union_is_convex(const Matrix& H1, const Vector& l1, const Matrix& H2, const Vector& l2,
                     Matrix* env_H = nullptr, Vector* env_l = nullptr, double tol = 1e-8);

}  // namespace odtmpc
