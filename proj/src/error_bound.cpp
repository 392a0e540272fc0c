#include "odtmpc/errors.hpp"
#include "odtmpc/evaluation.hpp"
#include "odtmpc/explicit_law.hpp"
#include "odtmpc/qp.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace odtmpc {

using nlohmann::json;

namespace {

constexpr int kMaxEnumerableVars = 12;

bool enumerable(const MpcProblem& problem) {
  return !problem.has_state_bounds() && problem.horizon * problem.m() <= kMaxEnumerableVars;
}

// Grid coordinates of a dataset row; false when the row is off the lattice.
bool lattice_index(const Dataset& data, Eigen::Index row, std::vector<std::int64_t>& idx) {
  const int n = data.n();
  idx.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double k = (data.X(row, j) - data.box.lo[j]) / data.delta_x;
    const double r = std::round(k);
    if (std::abs(k - r) > 1e-6) return false;
    idx[static_cast<std::size_t>(j)] = static_cast<std::int64_t>(r);
  }
  return true;
}

struct KeyHash {
  std::size_t operator()(const std::vector<std::int64_t>& k) const {
    return static_cast<std::size_t>(fnv1a(k.data(), k.size() * sizeof(std::int64_t)));
  }
};

// Offsets in {-1, 0, 1}^n whose first nonzero entry is +1 (one per +-pair).
std::vector<std::vector<int>> half_offsets(int n) {
  std::vector<std::vector<int>> out;
  int total = 1;
  for (int j = 0; j < n; ++j) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::vector<int> off(static_cast<std::size_t>(n));
    int c = code;
    for (int j = 0; j < n; ++j) {
      off[static_cast<std::size_t>(j)] = c % 3 - 1;
      c /= 3;
    }
    const auto first = std::find_if(off.begin(), off.end(), [](int v) { return v != 0; });
    if (first != off.end() && *first == 1) out.push_back(off);
  }
  return out;
}

}  // namespace

KMaxEstimate estimate_k_max(const MpcProblem& problem, const Dataset& data, const KMaxOptions& options) {
  require(data.rows() > 0, "dataset is empty");
  require(data.n() == problem.n() && data.m() == problem.m(), "dataset does not match the problem");
  require(data.delta_x > 0.0, "dataset is not grid-structured (delta_x = 0)");
  const int n = data.n();
  KMaxEstimate out;
  std::unordered_map<std::vector<std::int64_t>, Eigen::Index, KeyHash> where;
  where.reserve(static_cast<std::size_t>(data.rows()) * 2);
  std::vector<std::vector<std::int64_t>> keys(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    if (lattice_index(data, r, keys[static_cast<std::size_t>(r)])) where.emplace(keys[static_cast<std::size_t>(r)], r);
  }
  require(!where.empty(), "no dataset row lies on the grid");
  const Grid grid(data.box, data.delta_x);
  const auto offsets = half_offsets(n);

  struct Probe {
    Eigen::Index row;
    Vector x;
  };
  std::vector<Probe> probes;
  std::size_t missing_total = 0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const auto& key = keys[static_cast<std::size_t>(r)];
    if (key.empty()) continue;
    for (const auto& off : offsets) {
      std::vector<std::int64_t> nb = key;
      bool inside = true;
      for (int j = 0; j < n; ++j) {
        nb[static_cast<std::size_t>(j)] += off[static_cast<std::size_t>(j)];
        const auto c = nb[static_cast<std::size_t>(j)];
        inside = inside && c >= 0 && static_cast<std::uint64_t>(c) < grid.axis_counts()[static_cast<std::size_t>(j)];
      }
      if (!inside) continue;
      const auto it = where.find(nb);
      if (it != where.end()) {
        const double dx = (data.X.row(r) - data.X.row(it->second)).norm();
        const double du = (data.U.row(r) - data.U.row(it->second)).norm();
        out.estimate = std::max(out.estimate, du / dx);
        ++out.pairs;
      } else {
        ++missing_total;
      }
    }
  }
  // Missing neighbours are labelled by the solver, spread evenly over the budget.
  if (missing_total > 0 && options.max_probe_solves > 0) {
    const std::size_t stride = (missing_total + options.max_probe_solves - 1) / options.max_probe_solves;
    std::size_t counter = 0;
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
      const auto& key = keys[static_cast<std::size_t>(r)];
      if (key.empty()) continue;
      for (const auto& off : offsets) {
        std::vector<std::int64_t> nb = key;
        bool inside = true;
        for (int j = 0; j < n; ++j) {
          nb[static_cast<std::size_t>(j)] += off[static_cast<std::size_t>(j)];
          const auto c = nb[static_cast<std::size_t>(j)];
          inside = inside && c >= 0 && static_cast<std::uint64_t>(c) < grid.axis_counts()[static_cast<std::size_t>(j)];
        }
        if (!inside || where.count(nb)) continue;
        if (counter++ % stride != 0) continue;
        Vector x(n);
        for (int j = 0; j < n; ++j) x[j] = data.box.lo[j] + static_cast<double>(nb[static_cast<std::size_t>(j)]) * data.delta_x;
        probes.push_back({r, std::move(x)});
      }
    }
  }
  const CondensedQp qp = condense(problem);
  std::vector<double> ratio(probes.size(), 0.0);
  detail::parallel_slices(probes.size(), options.jobs, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const QpSolution sol = solve_qp(qp, probes[i].x);
      if (sol.status != QpStatus::Optimal) continue;
      const Vector x0 = data.X.row(probes[i].row).transpose();
      const Vector u0 = data.U.row(probes[i].row).transpose();
      ratio[i] = (u0 - sol.u0).norm() / (x0 - probes[i].x).norm();
    }
  });
  for (double r : ratio) out.estimate = std::max(out.estimate, r);
  out.pairs += probes.size();
  out.probe_solves = probes.size();
  if (options.certify && enumerable(problem)) {
    ExplicitOptions eo;
    eo.domain = data.box;
    out.certified = max_gain_norm(enumerate_explicit(problem, eo));
  }
  return out;
}

double ErrorBoundReport::formula(double delta_dt, double j_max, double k_dt, double k_max, int n, double delta_x) {
  return delta_dt + j_max + (k_dt + k_max) * (std::sqrt(static_cast<double>(n)) * delta_x / 2.0);
}

ErrorBoundReport error_bound_report(const ObliqueTree& tree, const MpcProblem& problem, const Dataset& data,
                                    const RowMatrix& test_states, const ErrorBoundOptions& options) {
  tree.validate();
  require(tree.n == problem.n() && tree.m == problem.m(), "tree does not match the problem");
  require(data.n() == tree.n && data.m() == tree.m, "dataset does not match the tree");
  require(test_states.cols() == tree.n, "test states have wrong dimension");
  ErrorBoundReport rep;
  rep.n = tree.n;
  rep.delta_x = data.delta_x;

  const RowMatrix P = predict_batch(tree, data.X);
  for (Eigen::Index r = 0; r < data.rows(); ++r) rep.delta_dt = std::max(rep.delta_dt, (P.row(r) - data.U.row(r)).norm());

  rep.k_dt = lipschitz_max(tree);
  const JumpEstimate jump = options.exact_jump ? exact_max_jump(tree, data.box)
                                               : estimate_max_jump(tree, data.box, options.samples_per_facet, options.seed);
  rep.j_max = jump.value;
  rep.j_max_exact = jump.exact;
  rep.degenerate_splits = jump.degenerate_splits;

  KMaxOptions ko = options.k_max;
  ko.jobs = options.jobs;
  const KMaxEstimate km = estimate_k_max(problem, data, ko);
  rep.k_max = km.estimate;
  rep.k_max_certified = km.certified;
  rep.bound = ErrorBoundReport::formula(rep.delta_dt, rep.j_max, rep.k_dt, rep.k_max, rep.n, rep.delta_x);

  const CondensedQp qp = condense(problem);
  const auto S = static_cast<std::size_t>(test_states.rows());
  std::vector<double> err(S, 0.0);
  detail::parallel_slices(S, options.jobs, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t i = begin; i < end; ++i) {
      const Vector x = test_states.row(static_cast<Eigen::Index>(i)).transpose();
      const QpSolution sol = solve_qp(qp, x);
      if (sol.status == QpStatus::Infeasible) continue;
      if (sol.status != QpStatus::Optimal) fail(Errc::MaxIterations, "QP did not converge on a test state");
      err[i] = (predict(tree, x) - sol.u0).norm();
    }
  });
  for (double e : err) rep.empirical_max = std::max(rep.empirical_max, e);
  rep.test_states = S;
  rep.violated = rep.empirical_max > rep.bound;
  return rep;
}

json error_bound_to_json(const ErrorBoundReport& r) {
  json j = {{"delta_dt_empirical_estimate", r.delta_dt},
            {"j_max", r.j_max},
            {"j_max_kind", r.j_max_exact ? "exact" : "monte-carlo lower estimate"},
            {"k_dt", r.k_dt},
            {"k_max_grid_estimate", r.k_max},
            {"delta_x", r.delta_x},
            {"n", r.n},
            {"bound", r.bound},
            {"empirical_max", r.empirical_max},
            {"test_states", r.test_states},
            {"violated", r.violated},
            {"degenerate_splits_skipped", r.degenerate_splits}};
  j["k_max_certified"] = r.k_max_certified ? json(*r.k_max_certified) : json(nullptr);
  return j;
}

}  // namespace odtmpc
