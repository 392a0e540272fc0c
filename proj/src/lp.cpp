#include "odtmpc/lp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace odtmpc {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-11;

class Tableau {
 public:
  Tableau(int rows, int cols) : rows_(rows), cols_(cols), t_(rows, cols + 1), basis_(rows, -1) {
    t_.setZero();
  }

  double& at(int i, int j) { return t_(i, j); }
  double& rhs(int i) { return t_(i, cols_); }
  double rhs(int i) const { return t_(i, cols_); }
  int& basis(int i) { return basis_[static_cast<std::size_t>(i)]; }
  int rows() const { return rows_; }

  void pivot(int r, int c) {
    const double p = t_(r, c);
    t_.row(r) /= p;
    for (int i = 0; i < rows_; ++i) {
      if (i == r) continue;
      const double f = t_(i, c);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  /// Maximizes cost'z over columns flagged in `allowed`. Returns false when
  /// unbounded.
  bool maximize(const Vector& cost, const std::vector<bool>& allowed) {
    const int max_pivots = 50 * (rows_ + cols_) + 100;
    for (int it = 0; it < max_pivots; ++it) {
      int enter = -1;
      for (int j = 0; j < cols_; ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        double reduced = cost[j];
        for (int i = 0; i < rows_; ++i) reduced -= cost[basis_[static_cast<std::size_t>(i)]] * t_(i, j);
        if (reduced > kCostTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = 0.0;
      for (int i = 0; i < rows_; ++i) {
        const double a = t_(i, enter);
        if (a <= kPivotTol) continue;
        const double ratio = rhs(i) / a;
        if (leave < 0 || ratio < best - 1e-13 ||
            (ratio <= best + 1e-13 && basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          leave = i;
          best = ratio;
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    return true;
  }

  double value(const Vector& cost) const {
    double v = 0.0;
    for (int i = 0; i < rows_; ++i) v += cost[basis_[static_cast<std::size_t>(i)]] * t_(i, cols_);
    return v;
  }

  Vector solution() const {
    Vector z = Vector::Zero(cols_);
    for (int i = 0; i < rows_; ++i) z[basis_[static_cast<std::size_t>(i)]] = t_(i, cols_);
    return z;
  }

  Eigen::Block<Matrix, 1, Eigen::Dynamic, false> row(int i) { return t_.row(i); }

 private:
  int rows_;
  int cols_;
  Matrix t_;
  std::vector<int> basis_;
};

}  // namespace

LpResult solve_lp(const Vector& c, const Matrix& A, const Vector& b) {
  const int nx = static_cast<int>(c.size());
  const int m = static_cast<int>(A.rows());
  LpResult result;

  if (m == 0) {
    if (c.cwiseAbs().maxCoeff() > 0.0) {
      result.status = LpStatus::Unbounded;
    } else {
      result.status = LpStatus::Optimal;
      result.x = Vector::Zero(nx);
    }
    return result;
  }

  // Columns: y+ (nx), y- (nx), slacks (m), artificials (one per negative rhs).
  std::vector<int> art_row;
  for (int i = 0; i < m; ++i) {
    if (b[i] < 0.0) art_row.push_back(i);
  }
  const int ny = 2 * nx;
  const int art0 = ny + m;
  const int cols = art0 + static_cast<int>(art_row.size());
  Tableau tab(m, cols);
  int next_art = art0;
  for (int i = 0; i < m; ++i) {
    const double sign = b[i] < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < nx; ++j) {
      tab.at(i, j) = sign * A(i, j);
      tab.at(i, nx + j) = -sign * A(i, j);
    }
    tab.at(i, ny + i) = sign;
    tab.rhs(i) = sign * b[i];
    if (b[i] < 0.0) {
      tab.at(i, next_art) = 1.0;
      tab.basis(i) = next_art++;
    } else {
      tab.basis(i) = ny + i;
    }
  }

  std::vector<bool> allowed(static_cast<std::size_t>(cols), true);
  if (!art_row.empty()) {
    Vector phase1 = Vector::Zero(cols);
    for (int j = art0; j < cols; ++j) phase1[j] = -1.0;
    tab.maximize(phase1, allowed);
    const double scale = 1.0 + b.cwiseAbs().maxCoeff();
    if (tab.value(phase1) < -1e-9 * scale) {
      result.status = LpStatus::Infeasible;
      return result;
    }
    // Drive remaining (zero-valued) artificials out of the basis.
    for (int i = 0; i < m; ++i) {
      if (tab.basis(i) < art0) continue;
      for (int j = 0; j < art0; ++j) {
        if (std::abs(tab.at(i, j)) > 1e-9) {
          tab.pivot(i, j);
          break;
        }
      }
    }
    for (int j = art0; j < cols; ++j) allowed[static_cast<std::size_t>(j)] = false;
  }

  Vector cost = Vector::Zero(cols);
  cost.head(nx) = c;
  cost.segment(nx, nx) = -c;
  if (!tab.maximize(cost, allowed)) {
    result.status = LpStatus::Unbounded;
    return result;
  }
  const Vector z = tab.solution();
  result.status = LpStatus::Optimal;
  result.x = z.head(nx) - z.segment(nx, nx);
  result.objective = c.dot(result.x);
  return result;
}

ChebyshevBall chebyshev_ball(const Matrix& A, const Vector& b, double radius_cap) {
  const int nx = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  Matrix Ab(m + 1, nx + 1);
  Vector bb(m + 1);
  for (int i = 0; i < m; ++i) {
    Ab.row(i).head(nx) = A.row(i);
    Ab(i, nx) = A.row(i).norm();
    bb[i] = b[i];
  }
  Ab.row(m).setZero();
  Ab(m, nx) = 1.0;
  bb[m] = radius_cap;
  Vector c = Vector::Zero(nx + 1);
  c[nx] = 1.0;
  const LpResult lp = solve_lp(c, Ab, bb);
  ChebyshevBall ball;
  if (lp.status != LpStatus::Optimal || lp.x[nx] < 0.0) return ball;
  ball.feasible = true;
  ball.center = lp.x.head(nx);
  ball.radius = lp.x[nx];
  return ball;
}

bool normalize_rows(Matrix& A, Vector& b, double zero_tol) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double nrm = A.row(i).norm();
    if (nrm <= zero_tol) {
      if (b[i] < -zero_tol) return false;
      continue;
    }
    A.row(i) /= nrm;
    b[i] /= nrm;
    keep.push_back(i);
  }
  if (keep.size() != static_cast<std::size_t>(A.rows())) {
    Matrix A2(static_cast<Eigen::Index>(keep.size()), A.cols());
    Vector b2(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
      A2.row(static_cast<Eigen::Index>(k)) = A.row(keep[k]);
      b2[static_cast<Eigen::Index>(k)] = b[keep[k]];
    }
    A = std::move(A2);
    b = std::move(b2);
  }
  return true;
}

void remove_redundant_rows(Matrix& A, Vector& b, double tol) {
  // Exact duplicates first, then LP checks against the surviving rows.
  std::vector<bool> active(static_cast<std::size_t>(A.rows()), true);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index k = 0; k < i; ++k) {
      if (!active[static_cast<std::size_t>(k)]) continue;
      if ((A.row(i) - A.row(k)).cwiseAbs().maxCoeff() <= 1e-12) {
        if (b[i] >= b[k]) {
          active[static_cast<std::size_t>(i)] = false;
        } else {
          active[static_cast<std::size_t>(k)] = false;
        }
        break;
      }
    }
  }
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    std::vector<Eigen::Index> others;
    for (Eigen::Index k = 0; k < A.rows(); ++k) {
      if (k != i && active[static_cast<std::size_t>(k)]) others.push_back(k);
    }
    // Relax the tested row slightly so the LP stays bounded when it is a facet.
    Matrix Ao(static_cast<Eigen::Index>(others.size()) + 1, A.cols());
    Vector bo(Ao.rows());
    for (std::size_t k = 0; k < others.size(); ++k) {
      Ao.row(static_cast<Eigen::Index>(k)) = A.row(others[k]);
      bo[static_cast<Eigen::Index>(k)] = b[others[k]];
    }
    Ao.row(Ao.rows() - 1) = A.row(i);
    bo[Ao.rows() - 1] = b[i] + 1.0;
    const LpResult lp = solve_lp(A.row(i).transpose(), Ao, bo);
    if (lp.status == LpStatus::Optimal && lp.objective <= b[i] + tol) {
      active[static_cast<std::size_t>(i)] = false;
    }
  }
  const auto count = std::count(active.begin(), active.end(), true);
  Matrix A2(count, A.cols());
  Vector b2(count);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    A2.row(r) = A.row(i);
    b2[r] = b[i];
    ++r;
  }
  A = std::move(A2);
  b = std::move(b2);
}

}  // namespace odtmpc
