#pragma once

#include "odtmpc/types.hpp"

namespace odtmpc {

/// Solves P = A'PA + Q by fixed-point iteration from P = Q.
/// Throws NonConvergent when the iteration does not contract within
/// `max_iterations` (spectral radius of A >= 1).
Matrix discrete_lyapunov(const Matrix& A, const Matrix& Q, int max_iterations = 10000);

}  // namespace odtmpc
