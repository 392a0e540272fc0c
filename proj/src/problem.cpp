#include "odtmpc/problem.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/lyapunov.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace odtmpc {

using nlohmann::json;

void LtiSystem::validate() const {
  require(A.rows() >= 1 && A.rows() == A.cols(), "A must be square with n >= 1");
  require(B.rows() == A.rows() && B.cols() >= 1, "B must be n x m with m >= 1");
  require(C.cols() == A.rows(), "C must have n columns");
  require(D.rows() == C.rows() && D.cols() == B.cols(), "D must be p x m");
  require(A.allFinite() && B.allFinite() && C.allFinite() && D.allFinite(),
          "system matrices must be finite");
}

LtiSystem LtiSystem::state_output(Matrix A, Matrix B) {
  const auto n = A.rows();
  const auto m = B.cols();
  LtiSystem sys{std::move(A), std::move(B), Matrix::Identity(n, n), Matrix::Zero(n, m)};
  return sys;
}

bool is_symmetric_psd(const Matrix& M, double tol) {
  if (M.rows() != M.cols() || !M.allFinite()) return false;
  const Matrix S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() >= -tol;
}

bool is_symmetric_pd(const Matrix& M) {
  if (M.rows() != M.cols() || !M.allFinite()) return false;
  const Matrix S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() > 0.0;
}

bool MpcProblem::has_state_bounds() const {
  for (int j = 0; j < x_min.size(); ++j) {
    if (std::isfinite(x_min[j]) || std::isfinite(x_max[j])) return true;
  }
  return false;
}

bool MpcProblem::has_input_bounds() const {
  for (int j = 0; j < u_min.size(); ++j) {
    if (std::isfinite(u_min[j]) || std::isfinite(u_max[j])) return true;
  }
  return false;
}

void MpcProblem::validate() const {
  system.validate();
  const int nx = n();
  const int nu = m();
  require(horizon >= 1, "horizon N must be >= 1");
  require(Q.rows() == nx && Q.cols() == nx, "Q must be n x n");
  require(P.rows() == nx && P.cols() == nx, "P must be n x n");
  require(R.rows() == nu && R.cols() == nu, "R must be m x m");
  require(is_symmetric_psd(Q), "Q must be symmetric positive semidefinite");
  require(is_symmetric_psd(P), "P must be symmetric positive semidefinite");
  require(is_symmetric_pd(R), "R must be symmetric positive definite");
  require(x_min.size() == nx && x_max.size() == nx, "state bounds must have n entries");
  require(u_min.size() == nu && u_max.size() == nu, "input bounds must have m entries");
  for (int j = 0; j < nx; ++j) {
    require(!std::isnan(x_min[j]) && !std::isnan(x_max[j]), "state bounds must not be NaN");
    require(x_min[j] < x_max[j], "x_min < x_max required componentwise");
  }
  for (int j = 0; j < nu; ++j) {
    require(!std::isnan(u_min[j]) && !std::isnan(u_max[j]), "input bounds must not be NaN");
    require(u_min[j] < u_max[j], "u_min < u_max required componentwise");
  }
}

MpcProblem case1_problem() {
  Matrix A(2, 2);
  A << 0.7326, -0.0861, 0.1722, 0.9909;
  Matrix B(2, 1);
  B << 0.0609, 0.0064;

  MpcProblem p;
  p.system = LtiSystem::state_output(A, B);
  p.horizon = 2;
  p.Q = Matrix::Identity(2, 2);
  p.R = Matrix::Constant(1, 1, 0.01);
  p.P = discrete_lyapunov(A, p.Q);
  p.x_min = Vector::Constant(2, -kInf);
  p.x_max = Vector::Constant(2, kInf);
  p.u_min = Vector::Constant(1, -2.0);
  p.u_max = Vector::Constant(1, 2.0);
  return p;
}

MpcProblem case2_problem() {
  Matrix A(4, 4);
  A << 0.4035, 0.3704, 0.2935, -0.7258,
      -0.2114, 0.6405, -0.6717, -0.0420,
       0.8368, 0.0175, -0.2806, 0.3808,
      -0.0724, 0.6001, 0.5552, 0.4919;
  Matrix B(4, 1);
  B << 1.6124, 0.4086, -1.4512, -0.6761;

  MpcProblem p;
  p.system = LtiSystem::state_output(A, B);
  p.horizon = 17;
  p.Q = Matrix::Identity(4, 4);
  p.R = Matrix::Constant(1, 1, 0.2);
  p.P = Matrix::Identity(4, 4);
  p.x_min = Vector::Constant(4, -kInf);
  p.x_max = Vector::Constant(4, kInf);
  p.u_min = Vector::Constant(1, -0.2);
  p.u_max = Vector::Constant(1, 0.2);
  return p;
}

bool is_builtin_problem(std::string_view id) { return id == "case1" || id == "case2"; }

MpcProblem builtin_problem(std::string_view id) {
  if (id == "case1") return case1_problem();
  if (id == "case2") return case2_problem();
  fail(Errc::InvalidArgument, "unknown built-in problem '" + std::string(id) + "'");
}

namespace {

double parse_bound(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  fail(Errc::SchemaMismatch, "bound entries must be numbers or \"inf\"/\"-inf\"");
}

Matrix parse_matrix(const json& v, const char* name) {
  if (v.is_number()) return Matrix::Constant(1, 1, v.get<double>());
  if (!v.is_array() || v.empty()) fail(Errc::SchemaMismatch, std::string(name) + " must be a non-empty array");
  // A flat array is read as a column vector.
  if (!v.front().is_array()) {
    Matrix M(static_cast<Eigen::Index>(v.size()), 1);
    for (std::size_t i = 0; i < v.size(); ++i) M(static_cast<Eigen::Index>(i), 0) = v[i].get<double>();
    return M;
  }
  const auto rows = v.size();
  const auto cols = v.front().size();
  Matrix M(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!v[i].is_array() || v[i].size() != cols) {
      fail(Errc::SchemaMismatch, std::string(name) + " rows must have equal length");
    }
    for (std::size_t j = 0; j < cols; ++j) {
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j].get<double>();
    }
  }
  return M;
}

Vector parse_bounds(const json& doc, const char* key, int size, double fallback) {
  if (!doc.contains(key)) return Vector::Constant(size, fallback);
  const auto& v = doc.at(key);
  if (!v.is_array()) return Vector::Constant(size, parse_bound(v));
  if (static_cast<int>(v.size()) != size) {
    fail(Errc::SchemaMismatch, std::string(key) + " has wrong length");
  }
  Vector out(size);
  for (int i = 0; i < size; ++i) out[i] = parse_bound(v[static_cast<std::size_t>(i)]);
  return out;
}

json matrix_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json bounds_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isinf(v[i])) {
      out.push_back(v[i] > 0 ? "inf" : "-inf");
    } else {
      out.push_back(v[i]);
    }
  }
  return out;
}

}  // namespace

MpcProblem problem_from_json(const json& doc) {
  try {
    MpcProblem p;
    Matrix A = parse_matrix(doc.at("A"), "A");
    Matrix B = parse_matrix(doc.at("B"), "B");
    const auto n = A.rows();
    const auto m = B.cols();
    p.system.A = A;
    p.system.B = B;
    p.system.C = doc.contains("C") ? parse_matrix(doc.at("C"), "C") : Matrix(Matrix::Identity(n, n));
    p.system.D = doc.contains("D") ? parse_matrix(doc.at("D"), "D")
                                   : Matrix(Matrix::Zero(p.system.C.rows(), m));
    p.horizon = doc.at("N").get<int>();
    p.Q = parse_matrix(doc.at("Q"), "Q");
    p.R = parse_matrix(doc.at("R"), "R");
    const auto& pv = doc.at("P");
    if (pv.is_string()) {
      if (pv.get<std::string>() != "lyapunov") {
        fail(Errc::SchemaMismatch, "P must be a matrix or \"lyapunov\"");
      }
      p.system.validate();
      p.P = discrete_lyapunov(p.system.A, p.Q);
    } else {
      p.P = parse_matrix(pv, "P");
    }
    p.x_min = parse_bounds(doc, "x_min", static_cast<int>(n), -kInf);
    p.x_max = parse_bounds(doc, "x_max", static_cast<int>(n), kInf);
    p.u_min = parse_bounds(doc, "u_min", static_cast<int>(m), -kInf);
    p.u_max = parse_bounds(doc, "u_max", static_cast<int>(m), kInf);
    p.validate();
    return p;
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, std::string("problem document: ") + e.what());
  }
}

json problem_to_json(const MpcProblem& p) {
  return json{{"A", matrix_json(p.system.A)}, {"B", matrix_json(p.system.B)},
              {"C", matrix_json(p.system.C)}, {"D", matrix_json(p.system.D)},
              {"N", p.horizon},                {"Q", matrix_json(p.Q)},
              {"R", matrix_json(p.R)},         {"P", matrix_json(p.P)},
              {"x_min", bounds_json(p.x_min)}, {"x_max", bounds_json(p.x_max)},
              {"u_min", bounds_json(p.u_min)}, {"u_max", bounds_json(p.u_max)}};
}

MpcProblem load_problem(const std::string& id_or_path) {
  if (is_builtin_problem(id_or_path)) return builtin_problem(id_or_path);
  std::ifstream in(id_or_path);
  if (!in) {
    fail(std::filesystem::exists(id_or_path) ? Errc::Io : Errc::InvalidArgument,
         "cannot open problem '" + id_or_path + "' (not a built-in id or readable file)");
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, "problem file is not valid JSON: " + std::string(e.what()));
  }
  return problem_from_json(doc);
}

}  // namespace odtmpc
