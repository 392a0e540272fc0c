#include "odtmpc/qp.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/lp.hpp"

#include <algorithm>
#include <cmath>

namespace odtmpc {

namespace {

constexpr double kFeasTol = 1e-10;

struct EqpResult {
  Vector U;
  Vector lambda;
  bool ok = false;
};

// Minimizer of 1/2 U'HU + g'U subject to G_W U = h_W (range-space method).
EqpResult solve_eqp(const CondensedQp& qp, const Vector& g, const Vector& h, const std::vector<int>& W) {
  EqpResult r;
  const Vector Hg = qp.H_inv * g;
  if (W.empty()) {
    r.U = -Hg;
    r.lambda.resize(0);
    r.ok = true;
    return r;
  }
  const auto k = static_cast<Eigen::Index>(W.size());
  Matrix AW(k, qp.num_vars());
  Vector hW(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    AW.row(i) = qp.G.row(W[static_cast<std::size_t>(i)]);
    hW[i] = h[W[static_cast<std::size_t>(i)]];
  }
  const Matrix HAt = qp.H_inv * AW.transpose();
  const Matrix S = AW * HAt;
  Eigen::LDLT<Matrix> ldlt(S);
  if (ldlt.info() != Eigen::Success) return r;
  r.lambda = ldlt.solve(-AW * Hg - hW);
  if (!r.lambda.allFinite()) return r;
  r.U = -Hg - HAt * r.lambda;
  r.ok = r.U.allFinite();
  return r;
}

double max_violation(const CondensedQp& qp, const Vector& U, const Vector& h) {
  if (qp.num_rows() == 0) return 0.0;
  return std::max(0.0, (qp.G * U - h).maxCoeff());
}

double kkt_residual(const CondensedQp& qp, const Vector& U, const Vector& g, const Vector& h,
                    const std::vector<int>& W, const Vector& lambda) {
  Vector stat = qp.H * U + g;
  double dual = 0.0;
  double comp = 0.0;
  for (std::size_t i = 0; i < W.size(); ++i) {
    const auto li = lambda[static_cast<Eigen::Index>(i)];
    stat += li * qp.G.row(W[i]).transpose();
    dual = std::max(dual, -li);
    comp = std::max(comp, std::abs(li * (qp.G.row(W[i]).dot(U) - h[W[i]])));
  }
  const double s = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;
  return std::max({s, max_violation(qp, U, h), dual, comp});
}

QpSolution finish(const CondensedQp& qp, const Vector& x0, Vector U, std::vector<int> W, Vector lambda,
                  QpStatus status, int iterations, const Vector& g, const Vector& h) {
  QpSolution sol;
  sol.kkt_residual = kkt_residual(qp, U, g, h, W, lambda);
  sol.u0 = U.head(qp.m);
  sol.objective = qp.cost(x0, U);
  sol.u_seq = std::move(U);
  sol.status = status;
  sol.iterations = iterations;
  // Report the working set in ascending row order.
  std::vector<std::size_t> order(W.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return W[a] < W[b]; });
  sol.active.resize(W.size());
  sol.multipliers.resize(static_cast<Eigen::Index>(W.size()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    sol.active[i] = W[order[i]];
    sol.multipliers[static_cast<Eigen::Index>(i)] = lambda[static_cast<Eigen::Index>(order[i])];
  }
  return sol;
}

}  // namespace

QpSolution solve_qp(const CondensedQp& qp, const Vector& x0, const QpOptions& options) {
  require(x0.size() == qp.n, "solve_qp: x0 has wrong dimension");
  require(options.tol > 0.0, "solve_qp: tol must be positive");
  const int nv = qp.num_vars();
  const int nc = qp.num_rows();
  const int max_iter = options.max_iterations > 0 ? options.max_iterations : 10 * (nv + nc) + 50;

  const Vector g = qp.F.transpose() * x0;
  const Vector h = nc ? Vector(qp.w + qp.E * x0) : Vector(0);

  for (int j = 0; j < qp.n; ++j) {
    if (x0[j] < qp.x0_min[j] - kFeasTol || x0[j] > qp.x0_max[j] + kFeasTol) {
      QpSolution sol;
      sol.status = QpStatus::Infeasible;
      return sol;
    }
  }

  Vector U = qp.unconstrained_gain * x0;
  std::vector<int> W;
  if (max_violation(qp, U, h) <= kFeasTol) {
    return finish(qp, x0, U, W, Vector(0), QpStatus::Optimal, 0, g, h);
  }

  bool started = false;
  if (options.warm_active != nullptr && !options.warm_active->empty()) {
    std::vector<int> Wt;
    for (int row : *options.warm_active) {
      if (row >= 0 && row < nc) Wt.push_back(row);
    }
    const EqpResult eq = solve_eqp(qp, g, h, Wt);
    if (eq.ok && max_violation(qp, eq.U, h) <= kFeasTol) {
      U = eq.U;
      W = std::move(Wt);
      started = true;
    }
  }

  if (!started) {
    // Project the unconstrained optimum onto the input box; the bound rows
    // active there form a linearly independent starting working set.
    std::vector<int> Wb;
    for (int i = 0; i < nc; ++i) {
      const auto& tag = qp.rows[static_cast<std::size_t>(i)];
      const int v = tag.step * qp.m + tag.component;
      if (tag.kind == ConstraintRow::Kind::InputUpper && U[v] > qp.w[i]) {
        U[v] = qp.w[i];
        Wb.push_back(i);
      } else if (tag.kind == ConstraintRow::Kind::InputLower && -U[v] > qp.w[i]) {
        U[v] = -qp.w[i];
        Wb.push_back(i);
      }
    }
    if (max_violation(qp, U, h) <= kFeasTol) {
      W = std::move(Wb);
    } else {
      const LpResult phase1 = solve_lp(Vector::Zero(nv), qp.G, h);
      if (phase1.status != LpStatus::Optimal) {
        QpSolution sol;
        sol.status = QpStatus::Infeasible;
        return sol;
      }
      U = phase1.x;
      W.clear();
    }
  }

  Vector lambda(0);
  for (int iter = 1; iter <= max_iter; ++iter) {
    const EqpResult eq = solve_eqp(qp, g, h, W);
    if (!eq.ok) break;
    const Vector p = eq.U - U;
    if (p.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + U.cwiseAbs().maxCoeff())) {
      U = eq.U;
      lambda = eq.lambda;
      Eigen::Index worst = -1;
      double most_negative = -1e-12 * (1.0 + (lambda.size() ? lambda.cwiseAbs().maxCoeff() : 0.0));
      for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda[i] < most_negative) {
          most_negative = lambda[i];
          worst = i;
        }
      }
      if (worst < 0) {
        QpSolution sol = finish(qp, x0, U, W, lambda, QpStatus::Optimal, iter, g, h);
        if (sol.kkt_residual > options.tol) sol.status = QpStatus::MaxIterations;
        return sol;
      }
      W.erase(W.begin() + worst);
      continue;
    }
    double alpha = 1.0;
    int blocking = -1;
    for (int i = 0; i < nc; ++i) {
      if (std::find(W.begin(), W.end(), i) != W.end()) continue;
      const double ap = qp.G.row(i).dot(p);
      if (ap <= 1e-14) continue;
      const double step = (h[i] - qp.G.row(i).dot(U)) / ap;
      if (step < alpha) {
        alpha = step;
        blocking = i;
      }
    }
    alpha = std::max(alpha, 0.0);
    U += alpha * p;
    if (blocking >= 0) W.push_back(blocking);
  }

  const EqpResult eq = solve_eqp(qp, g, h, W);
  return finish(qp, x0, eq.ok ? eq.U : U, W, eq.ok ? eq.lambda : Vector(Vector::Zero(static_cast<Eigen::Index>(W.size()))),
                QpStatus::MaxIterations, max_iter, g, h);
}

Vector mpc_control(const MpcProblem& problem, const Vector& x0) {
  const CondensedQp qp = condense(problem);
  const QpSolution sol = solve_qp(qp, x0);
  if (sol.status == QpStatus::Infeasible) fail(Errc::Infeasible, "MPC problem infeasible at x0");
  if (sol.status != QpStatus::Optimal) fail(Errc::MaxIterations, "QP solver did not meet the KKT tolerance");
  return sol.u0;
}

MpcController::MpcController(const MpcProblem& problem, bool warm_start, double tol)
    : problem_(problem), qp_(condense(problem)), warm_start_(warm_start), tol_(tol) {}

void MpcController::reset() {
  have_last_ = false;
  last_active_.clear();
  warm_used_for_last_.clear();
}

QpSolution MpcController::solve(const Vector& x0) {
  QpOptions opts;
  opts.tol = tol_;
  std::vector<int> warm;
  if (warm_start_ && have_last_) {
    const bool same = last_x_.size() == x0.size() && last_x_ == x0;
    warm = same ? warm_used_for_last_ : last_active_;
    opts.warm_active = &warm;
  }
  QpSolution sol = solve_qp(qp_, x0, opts);
  if (warm_start_) {
    const bool same = have_last_ && last_x_.size() == x0.size() && last_x_ == x0;
    if (!same) {
      warm_used_for_last_ = warm;
      last_x_ = x0;
    }
    last_active_ = sol.active;
    have_last_ = true;
  }
  return sol;
}

Vector MpcController::control(const Vector& x0) {
  const QpSolution sol = solve(x0);
  if (sol.status == QpStatus::Infeasible) fail(Errc::Infeasible, "MPC problem infeasible at x0");
  if (sol.status != QpStatus::Optimal) fail(Errc::MaxIterations, "QP solver did not meet the KKT tolerance");
  return sol.u0;
}

}  // namespace odtmpc
