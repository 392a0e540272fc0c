#include "odtmpc/errors.hpp"
#include "odtmpc/qp.hpp"

#include <cmath>

namespace odtmpc {

CondensedQp condense(const MpcProblem& problem) {
  problem.validate();
  const int n = problem.n();
  const int m = problem.m();
  const int N = problem.horizon;
  const int nv = N * m;
  const Matrix& A = problem.system.A;
  const Matrix& B = problem.system.B;

  // x(k) = Phi[k] x0 + Gamma[k] U
  std::vector<Matrix> Phi(static_cast<std::size_t>(N + 1));
  std::vector<Matrix> Gamma(static_cast<std::size_t>(N + 1));
  Phi[0] = Matrix::Identity(n, n);
  Gamma[0] = Matrix::Zero(n, nv);
  for (int k = 1; k <= N; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    Phi[ku] = A * Phi[ku - 1];
    Gamma[ku] = A * Gamma[ku - 1];
    Gamma[ku].middleCols((k - 1) * m, m) += B;
  }

  CondensedQp qp;
  qp.n = n;
  qp.m = m;
  qp.horizon = N;
  qp.H = Matrix::Zero(nv, nv);
  qp.F = Matrix::Zero(n, nv);
  qp.Y = Matrix::Zero(n, n);
  for (int k = 0; k <= N; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const Matrix& W = (k == N) ? problem.P : problem.Q;
    qp.H += Gamma[ku].transpose() * W * Gamma[ku];
    qp.F += Phi[ku].transpose() * W * Gamma[ku];
    qp.Y += Phi[ku].transpose() * W * Phi[ku];
  }
  for (int k = 0; k < N; ++k) qp.H.block(k * m, k * m, m, m) += problem.R;
  qp.H = 0.5 * (qp.H + qp.H.transpose());
  qp.Y = 0.5 * (qp.Y + qp.Y.transpose());

  std::vector<Eigen::RowVectorXd> g_rows;
  std::vector<double> w_vals;
  std::vector<Eigen::RowVectorXd> e_rows;
  auto add_row = [&](ConstraintRow tag, Eigen::RowVectorXd g, double w, Eigen::RowVectorXd e) {
    qp.rows.push_back(tag);
    g_rows.push_back(std::move(g));
    w_vals.push_back(w);
    e_rows.push_back(std::move(e));
  };

  for (int k = 0; k < N; ++k) {
    for (int j = 0; j < m; ++j) {
      const int v = k * m + j;
      if (std::isfinite(problem.u_max[j])) {
        Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(nv);
        g[v] = 1.0;
        add_row({ConstraintRow::Kind::InputUpper, k, j}, g, problem.u_max[j], Eigen::RowVectorXd::Zero(n));
      }
      if (std::isfinite(problem.u_min[j])) {
        Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(nv);
        g[v] = -1.0;
        add_row({ConstraintRow::Kind::InputLower, k, j}, g, -problem.u_min[j], Eigen::RowVectorXd::Zero(n));
      }
    }
  }
  for (int k = 1; k <= N; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    for (int j = 0; j < n; ++j) {
      if (std::isfinite(problem.x_max[j])) {
        add_row({ConstraintRow::Kind::StateUpper, k, j}, Gamma[ku].row(j), problem.x_max[j], -Phi[ku].row(j));
      }
      if (std::isfinite(problem.x_min[j])) {
        add_row({ConstraintRow::Kind::StateLower, k, j}, -Gamma[ku].row(j), -problem.x_min[j], Phi[ku].row(j));
      }
    }
  }

  const auto rows = static_cast<Eigen::Index>(g_rows.size());
  qp.G.resize(rows, nv);
  qp.w.resize(rows);
  qp.E.resize(rows, n);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    qp.G.row(i) = g_rows[iu];
    qp.w[i] = w_vals[iu];
    qp.E.row(i) = e_rows[iu];
  }
  qp.x0_min = problem.x_min;
  qp.x0_max = problem.x_max;

  Eigen::LLT<Matrix> llt(qp.H);
  if (llt.info() != Eigen::Success) {
    fail(Errc::InvalidArgument, "condensed Hessian is not positive definite");
  }
  qp.H_inv = llt.solve(Matrix::Identity(nv, nv));
  qp.H_inv = 0.5 * (qp.H_inv + qp.H_inv.transpose());
  qp.unconstrained_gain = -qp.H_inv * qp.F.transpose();
  return qp;
}

}  // namespace odtmpc
