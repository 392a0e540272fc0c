#pragma once

#include "odtmpc/problem.hpp"
#include "odtmpc/types.hpp"

#include <optional>
#include <vector>

namespace odtmpc {

struct ConstraintRow {
  enum class Kind { InputUpper, InputLower, StateUpper, StateLower };
  Kind kind;
  int step;       ///< prediction step k (inputs 0..N-1, states 1..N)
  int component;  ///< index into u(k) or x(k)
};

/// MPC problem with the state equalities eliminated. For the stacked input
/// sequence U and initial state x0 the original cost equals
///   J(x0, U) = U'HU + 2 x0'FU + x0'Y x0,
/// so the QP solved is  min 1/2 U'HU + (F'x0)'U  s.t.  G U <= w + E x0.
struct CondensedQp {
  int n = 0;
  int m = 0;
  int horizon = 0;
  Matrix H;  ///< (N m) x (N m), symmetric positive definite
  Matrix F;  ///< n x (N m)
  Matrix Y;  ///< n x n, x0-only term of J
  Matrix G;  ///< rows x (N m)
  Vector w;
  Matrix E;  ///< rows x n
  std::vector<ConstraintRow> rows;
  Vector x0_min;  ///< bounds on x(0) itself; no decision-variable dependence
  Vector x0_max;

  // Factorizations cached at condensation time.
  Matrix H_inv;
  Matrix unconstrained_gain;  ///< -H^{-1} F', maps x0 to the unconstrained optimum

  int num_vars() const { return horizon * m; }
  int num_rows() const { return static_cast<int>(G.rows()); }

  double cost(const Vector& x0, const Vector& U) const {
    return U.dot(H * U) + 2.0 * x0.dot(F * U) + x0.dot(Y * x0);
  }
};

CondensedQp condense(const MpcProblem& problem);

enum class QpStatus { Optimal, Infeasible, MaxIterations };

struct QpSolution {
  Vector u_seq;
  Vector u0;
  double objective = 0.0;  ///< J(x0, U*), the full horizon cost
  QpStatus status = QpStatus::MaxIterations;
  double kkt_residual = 0.0;
  std::vector<int> active;  ///< constraint rows in the final working set
  Vector multipliers;       ///< one per entry of `active`
  int iterations = 0;
};

struct QpOptions {
  double tol = 1e-9;
  int max_iterations = 0;  ///< 0 selects 10 * (vars + rows) + 50
  /// Working set to try first (receding-horizon warm start).
  const std::vector<int>* warm_active = nullptr;
};

/// Primal active-set method on the condensed QP. Deterministic in its inputs.
QpSolution solve_qp(const CondensedQp& qp, const Vector& x0, const QpOptions& options = {});

/// kappa_N(x0): first optimal input. Throws Infeasible / MaxIterations.
Vector mpc_control(const MpcProblem& problem, const Vector& x0);

/// Receding-horizon controller with a cached condensed QP and optional warm
/// starts from the previous solve. Not thread-safe; use one per thread.
class MpcController {
 public:
  explicit MpcController(const MpcProblem& problem, bool warm_start = true, double tol = 1e-9);

  const MpcProblem& problem() const { return problem_; }
  const CondensedQp& qp() const { return qp_; }

  /// Throws Infeasible / MaxIterations on anything but an Optimal solve.
  Vector control(const Vector& x0);
  QpSolution solve(const Vector& x0);
  void reset();

 private:
  MpcProblem problem_;
  CondensedQp qp_;
  bool warm_start_;
  double tol_;
  // Re-solving the state just solved warm-starts from the set used for that
  // state, not from its own answer, so repeated timing stays realistic.
  Vector last_x_;
  std::vector<int> last_active_;
  std::vector<int> warm_used_for_last_;
  bool have_last_ = false;
};

}  // namespace odtmpc
