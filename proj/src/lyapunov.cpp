#include "odtmpc/lyapunov.hpp"

#include "odtmpc/errors.hpp"

namespace odtmpc {

Matrix discrete_lyapunov(const Matrix& A, const Matrix& Q, int max_iterations) {
  require(A.rows() == A.cols() && Q.rows() == A.rows() && Q.cols() == A.cols(),
          "discrete_lyapunov: A and Q must be square and of equal size");
  const Matrix Qs = 0.5 * (Q + Q.transpose());
  Matrix P = Qs;
  for (int it = 0; it < max_iterations; ++it) {
    Matrix next = A.transpose() * P * A + Qs;
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > 1e150) break;
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    if (change <= 1e-14 * std::max(1.0, P.cwiseAbs().maxCoeff())) return P;
  }
  fail(Errc::NonConvergent, "fixed-point iteration P <- A'PA + Q did not contract (spectral radius >= 1?)");
}

}  // namespace odtmpc
