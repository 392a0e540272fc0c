#include "odtmpc/explicit_law.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/lp.hpp"
#include "odtmpc/qp.hpp"

#include <algorithm>
#include <cmath>

namespace odtmpc {

namespace {

Matrix stack_rows(const Matrix& A, const Matrix& B) {
  Matrix out(A.rows() + B.rows(), std::max(A.cols(), B.cols()));
  if (A.rows()) out.topRows(A.rows()) = A;
  if (B.rows()) out.bottomRows(B.rows()) = B;
  return out;
}

Vector stack(const Vector& a, const Vector& b) {
  Vector out(a.size() + b.size());
  out << a, b;
  return out;
}

void append_box_rows(const StateBox& box, Matrix& H, Vector& l) {
  const int n = box.dim();
  Matrix Hb(2 * n, n);
  Vector lb(2 * n);
  Hb.topRows(n) = Matrix::Identity(n, n);
  Hb.bottomRows(n) = -Matrix::Identity(n, n);
  lb.head(n) = box.hi;
  lb.tail(n) = -box.lo;
  H = stack_rows(H, Hb);
  l = stack(l, lb);
}

bool same_law(const RegionLaw& a, const RegionLaw& b) {
  const double scale = 1.0 + std::max(a.F.cwiseAbs().maxCoeff(), a.g.cwiseAbs().maxCoeff());
  return (a.F - b.F).cwiseAbs().maxCoeff() <= 1e-9 * scale &&
         (a.g - b.g).cwiseAbs().maxCoeff() <= 1e-9 * scale;
}

// max c'x over {H x <= l}; +inf when unbounded, -inf when empty.
double lp_max(const Vector& c, const Matrix& H, const Vector& l) {
  const LpResult r = solve_lp(c, H, l);
  if (r.status == LpStatus::Unbounded) return kInf;
  if (r.status == LpStatus::Infeasible) return -kInf;
  return r.objective;
}

}  // namespace

bool RegionLaw::contains(const Vector& x, double tol) const {
  if (H.rows() == 0) return true;
  return (H * x - l).maxCoeff() <= tol;
}

bool union_is_convex(const Matrix& H1, const Vector& l1, const Matrix& H2, const Vector& l2, Matrix* env_H,
                     Vector* env_l, double tol) {
  std::vector<Eigen::Index> keep1;
  std::vector<Eigen::Index> drop1;
  std::vector<Eigen::Index> keep2;
  std::vector<Eigen::Index> drop2;
  for (Eigen::Index i = 0; i < H1.rows(); ++i) {
    (lp_max(H1.row(i).transpose(), H2, l2) <= l1[i] + tol ? keep1 : drop1).push_back(i);
  }
  for (Eigen::Index i = 0; i < H2.rows(); ++i) {
    (lp_max(H2.row(i).transpose(), H1, l1) <= l2[i] + tol ? keep2 : drop2).push_back(i);
  }
  const auto ne = static_cast<Eigen::Index>(keep1.size() + keep2.size());
  Matrix He(ne, H1.cols());
  Vector le(ne);
  Eigen::Index r = 0;
  for (auto i : keep1) {
    He.row(r) = H1.row(i);
    le[r++] = l1[i];
  }
  for (auto i : keep2) {
    He.row(r) = H2.row(i);
    le[r++] = l2[i];
  }
  // env must equal the union: every point of env outside P1 has to lie in P2.
  for (auto i : drop1) {
    Matrix Hs(ne + 1, H1.cols());
    Vector ls(ne + 1);
    Hs.topRows(ne) = He;
    ls.head(ne) = le;
    Hs.row(ne) = -H1.row(i);
    ls[ne] = -l1[i];
    for (auto k : drop2) {
      if (lp_max(H2.row(k).transpose(), Hs, ls) > l2[k] + tol) return false;
    }
  }
  if (env_H) *env_H = He;
  if (env_l) *env_l = le;
  return true;
}

std::vector<RegionLaw> enumerate_explicit(const MpcProblem& problem, const ExplicitOptions& options) {
  problem.validate();
  if (problem.has_state_bounds()) {
    fail(Errc::InvalidArgument, "explicit enumeration supports input-box constraints only");
  }
  if (options.domain) {
    options.domain->validate();
    require(options.domain->dim() == problem.n(), "enumeration domain has wrong dimension");
  }
  const CondensedQp qp = condense(problem);
  const int n = qp.n;
  const int m = qp.m;
  const int nv = qp.num_vars();

  // Per stacked input: the admissible states and the matching row index.
  struct Choice {
    char label;
    int row;
  };
  std::vector<std::vector<Choice>> choices(static_cast<std::size_t>(nv));
  for (int v = 0; v < nv; ++v) choices[static_cast<std::size_t>(v)].push_back({'0', -1});
  for (int i = 0; i < qp.num_rows(); ++i) {
    const auto& tag = qp.rows[static_cast<std::size_t>(i)];
    const int v = tag.step * m + tag.component;
    const char c = tag.kind == ConstraintRow::Kind::InputUpper ? '+' : '-';
    choices[static_cast<std::size_t>(v)].push_back({c, i});
  }
  double count = 1.0;
  for (const auto& c : choices) count *= static_cast<double>(c.size());
  if (count > static_cast<double>(options.max_candidates)) {
    fail(Errc::TooLarge, "explicit enumeration needs " + std::to_string(static_cast<long double>(count)) +
                             " candidate active sets, above the configured cap");
  }

  std::vector<RegionLaw> regions;
  std::vector<std::size_t> digit(static_cast<std::size_t>(nv), 0);
  const auto total = static_cast<std::size_t>(count);
  for (std::size_t cand = 0; cand < total; ++cand) {
    if (cand > 0) {
      // Mixed-radix increment, last input fastest.
      for (int v = nv - 1; v >= 0; --v) {
        auto& d = digit[static_cast<std::size_t>(v)];
        if (++d < choices[static_cast<std::size_t>(v)].size()) break;
        d = 0;
      }
    }
    std::string label(static_cast<std::size_t>(nv), '0');
    std::vector<int> active;
    for (int v = 0; v < nv; ++v) {
      const Choice& c = choices[static_cast<std::size_t>(v)][digit[static_cast<std::size_t>(v)]];
      label[static_cast<std::size_t>(v)] = c.label;
      if (c.row >= 0) active.push_back(c.row);
    }
    const auto k = static_cast<Eigen::Index>(active.size());

    Matrix KKT = Matrix::Zero(nv + k, nv + k);
    KKT.topLeftCorner(nv, nv) = qp.H;
    Matrix rhs_x = Matrix::Zero(nv + k, n);
    Vector rhs_0 = Vector::Zero(nv + k);
    rhs_x.topRows(nv) = -qp.F.transpose();
    for (Eigen::Index a = 0; a < k; ++a) {
      const int row = active[static_cast<std::size_t>(a)];
      KKT.block(nv + a, 0, 1, nv) = qp.G.row(row);
      KKT.block(0, nv + a, nv, 1) = qp.G.row(row).transpose();
      rhs_x.row(nv + a) = qp.E.row(row);
      rhs_0[nv + a] = qp.w[row];
    }
    Eigen::FullPivLU<Matrix> lu(KKT);
    if (!lu.isInvertible()) continue;
    const Matrix sol_x = lu.solve(rhs_x);
    const Vector sol_0 = lu.solve(rhs_0);
    const Matrix KU = sol_x.topRows(nv);
    const Vector kU = sol_0.head(nv);

    // Primal feasibility of inactive rows, dual feasibility of active ones.
    std::vector<int> inactive;
    for (int i = 0; i < qp.num_rows(); ++i) {
      if (std::find(active.begin(), active.end(), i) == active.end()) inactive.push_back(i);
    }
    const auto ni = static_cast<Eigen::Index>(inactive.size());
    Matrix H(ni + k, n);
    Vector l(ni + k);
    for (Eigen::Index r = 0; r < ni; ++r) {
      const int row = inactive[static_cast<std::size_t>(r)];
      H.row(r) = qp.G.row(row) * KU - qp.E.row(row);
      l[r] = qp.w[row] - qp.G.row(row).dot(kU);
    }
    for (Eigen::Index a = 0; a < k; ++a) {
      H.row(ni + a) = -sol_x.row(nv + a);
      l[ni + a] = sol_0[nv + a];
    }
    if (options.domain) append_box_rows(*options.domain, H, l);
    if (!normalize_rows(H, l)) continue;

    const ChebyshevBall ball = chebyshev_ball(H, l);
    if (!ball.feasible || ball.radius <= options.min_radius) continue;
    remove_redundant_rows(H, l);

    RegionLaw region;
    region.H = std::move(H);
    region.l = std::move(l);
    region.F = KU.topRows(m);
    region.g = kU.head(m);
    region.active_sets.push_back(label);
    region.center = ball.center;
    region.radius = ball.radius;
    regions.push_back(std::move(region));
  }

  if (!options.merge_equal_laws) return regions;

  bool merged = true;
  while (merged) {
    merged = false;
    for (std::size_t i = 0; i < regions.size() && !merged; ++i) {
      for (std::size_t j = i + 1; j < regions.size() && !merged; ++j) {
        if (!same_law(regions[i], regions[j])) continue;
        Matrix He;
        Vector le;
        if (!union_is_convex(regions[i].H, regions[i].l, regions[j].H, regions[j].l, &He, &le)) continue;
        if (!normalize_rows(He, le)) continue;
        const ChebyshevBall ball = chebyshev_ball(He, le);
        if (!ball.feasible) continue;
        remove_redundant_rows(He, le);
        regions[i].H = std::move(He);
        regions[i].l = std::move(le);
        regions[i].center = ball.center;
        regions[i].radius = ball.radius;
        for (auto& s : regions[j].active_sets) regions[i].active_sets.push_back(std::move(s));
        regions.erase(regions.begin() + static_cast<std::ptrdiff_t>(j));
        merged = true;
      }
    }
  }
  return regions;
}

Vector eval_explicit(const std::vector<RegionLaw>& laws, const Vector& x, double tol) {
  for (const auto& region : laws) {
    if (region.contains(x, tol)) return region.evaluate(x);
  }
  fail(Errc::NotCovered, "state is not covered by any region of the explicit law");
}

double max_gain_norm(const std::vector<RegionLaw>& laws) {
  double best = 0.0;
  for (const auto& r : laws) {
    Eigen::JacobiSVD<Matrix> svd(r.F);
    if (svd.singularValues().size()) best = std::max(best, svd.singularValues()[0]);
  }
  return best;
}

}  // namespace odtmpc
