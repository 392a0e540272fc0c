#pragma once

#include "odtmpc/types.hpp"

#include <json.hpp>

#include <string>
#include <string_view>

namespace odtmpc {

/// Discrete-time LTI dynamics x(k+1) = A x(k) + B u(k), y(k) = C x(k) + D u(k).
struct LtiSystem {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix D;

  int n() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int p() const { return static_cast<int>(C.rows()); }

  Vector step(const Vector& x, const Vector& u) const { return A * x + B * u; }

  /// Throws InvalidArgument on inconsistent dimensions.
  void validate() const;

  /// System with C = I and D = 0.
  static LtiSystem state_output(Matrix A, Matrix B);
};

/// Finite-horizon regulation problem
///   min  sum_{k<N} x'Qx + u'Ru + x(N)'P x(N)
///   s.t. dynamics, x_min <= x(k) <= x_max, u_min <= u(k) <= u_max.
/// Infinite state bounds mean "unbounded" and generate no constraint rows.
struct MpcProblem {
  LtiSystem system;
  int horizon = 1;
  Matrix Q;
  Matrix R;
  Matrix P;
  Vector x_min;
  Vector x_max;
  Vector u_min;
  Vector u_max;

  int n() const { return system.n(); }
  int m() const { return system.m(); }
  bool has_state_bounds() const;
  bool has_input_bounds() const;

  void validate() const;
};

bool is_symmetric_psd(const Matrix& M, double tol = 1e-10);
bool is_symmetric_pd(const Matrix& M);

/// Two-state benchmark: N = 2, Q = I, R = 0.01, P from the discrete Lyapunov
/// equation P = A'PA + I, |u| <= 2.
MpcProblem case1_problem();
/// Four-state benchmark: N = 17, Q = P = I, R = 0.2, |u| <= 0.2.
MpcProblem case2_problem();

/// "case1" / "case2"; throws InvalidArgument for anything else.
MpcProblem builtin_problem(std::string_view id);
bool is_builtin_problem(std::string_view id);

/// Parses {A, B, C, D, N, Q, R, P | "lyapunov", x_min, x_max, u_min, u_max}.
/// Matrices are row-major nested arrays; bounds accept "inf" / "-inf".
MpcProblem problem_from_json(const nlohmann::json& doc);
nlohmann::json problem_to_json(const MpcProblem& problem);

/// Built-in id or path to a JSON problem document.
MpcProblem load_problem(const std::string& id_or_path);

}  // namespace odtmpc
