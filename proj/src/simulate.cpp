#include "odtmpc/errors.hpp"
#include "odtmpc/evaluation.hpp"
#include "odtmpc/qp.hpp"
#include "odtmpc/random.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace odtmpc {

using nlohmann::json;

void DisturbanceSpec::validate() const {
  require(std::isfinite(w_bound) && w_bound >= 0.0, "process noise bound must be >= 0");
  require(std::isfinite(e_bound) && e_bound >= 0.0, "estimation error bound must be >= 0");
}

namespace {

constexpr int kLambdaSteps = 20;

void draw(Vector& v, double bound, DisturbanceSpec::Mode mode, Rng& rng) {
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    if (bound == 0.0) {
      v[j] = 0.0;
    } else if (mode == DisturbanceSpec::Mode::SignFlip) {
      v[j] = rng.coin() ? bound : -bound;
    } else {
      v[j] = rng.uniform(-bound, bound);
    }
  }
}

double stage(const Matrix& Q, const Eigen::Ref<const Vector>& x) { return x.dot(Q * x); }

}  // namespace

SimResult simulate(const MpcProblem& problem, const Controller& controller, const Vector& x0, int steps,
                   const DisturbanceSpec& dist) {
  require(steps >= 1, "steps must be >= 1");
  require(x0.size() == problem.n(), "initial state has wrong dimension");
  dist.validate();
  const int n = problem.n();
  const int m = problem.m();
  SimResult res;
  res.trajectory = RowMatrix::Zero(steps + 1, n);
  res.inputs = RowMatrix::Zero(steps, m);
  res.process_noise = RowMatrix::Zero(steps, n);
  res.trajectory.row(0) = x0.transpose();
  Rng rng(dist.seed);
  Vector x = x0, e(n), w(n);
  auto breach = [&](const Vector& s) {
    for (int j = 0; j < n; ++j) {
      if (s[j] > problem.x_max[j] + 1e-6 || s[j] < problem.x_min[j] - 1e-6) return true;
    }
    return false;
  };
  res.violated = breach(x);
  for (int k = 0; k < steps; ++k) {
    draw(e, dist.e_bound, dist.mode, rng);
    draw(w, dist.w_bound, dist.mode, rng);
    Vector u;
    try {
      u = controller(x + e);
    } catch (const std::exception& ex) {
      res.failed = true;
      res.failure = ex.what();
      break;
    }
    if (u.size() != m) {
      res.failed = true;
      res.failure = "controller returned an input of wrong dimension";
      break;
    }
    for (int j = 0; j < m; ++j) u[j] = std::clamp(u[j], problem.u_min[j], problem.u_max[j]);
    x = problem.system.A * x + problem.system.B * u + w;
    res.inputs.row(k) = u.transpose();
    res.process_noise.row(k) = w.transpose();
    res.trajectory.row(k + 1) = x.transpose();
    res.violated = res.violated || breach(x);
    res.steps_completed = k + 1;
  }
  if (res.failed) {
    res.trajectory.conservativeResize(res.steps_completed + 1, n);
    res.inputs.conservativeResize(res.steps_completed, m);
    res.process_noise.conservativeResize(res.steps_completed, n);
  }
  const int horizon = std::min(res.steps_completed, kLambdaSteps);
  if (horizon > 0) {
    double sum = 0.0;
    for (int t = 1; t <= horizon; ++t) sum += stage(problem.Q, res.trajectory.row(t).transpose());
    res.lambda = sum / horizon;
  }
  return res;
}

double lambda_metric(const RowMatrix& trajectory, const Matrix& Q) {
  if (trajectory.rows() < kLambdaSteps + 1) {
    fail(Errc::TooShort, "lambda needs at least 21 states, got " + std::to_string(trajectory.rows()));
  }
  require(Q.rows() == trajectory.cols() && Q.cols() == trajectory.cols(), "Q has wrong dimension");
  double sum = 0.0;
  for (int t = 1; t <= kLambdaSteps; ++t) sum += stage(Q, trajectory.row(t).transpose());
  return sum / kLambdaSteps;
}

Controller mpc_controller(const MpcProblem& problem, bool warm_start) {
  auto ctl = std::make_shared<MpcController>(problem, warm_start);
  return [ctl](const Vector& x) { return ctl->control(x); };
}

Controller tree_controller(const ObliqueTree& tree) {
  auto t = std::make_shared<const ObliqueTree>(tree);
  return [t](const Vector& x) { return predict(*t, x); };
}

double mpc_value(const MpcProblem& problem, const Vector& x) {
  const CondensedQp qp = condense(problem);
  const QpSolution sol = solve_qp(qp, x);
  if (sol.status != QpStatus::Optimal) fail(Errc::Infeasible, "MPC problem has no optimal solution at x");
  return sol.objective;
}

RowMatrix level_set_states(const MpcProblem& problem, const StateBox& box, std::size_t count, double fraction,
                           std::uint64_t seed) {
  box.validate();
  require(box.dim() == problem.n(), "box dimension does not match the problem");
  require(fraction > 0.0 && fraction <= 1.0, "level fraction must be in (0, 1]");
  const CondensedQp qp = condense(problem);
  auto value = [&](const Vector& x) {
    const QpSolution sol = solve_qp(qp, x);
    return sol.status == QpStatus::Optimal ? sol.objective : kInf;
  };
  const int n = box.dim();
  Rng rng(seed);
  double rho = kInf;
  constexpr int kPerFace = 400;
  for (int j = 0; j < n; ++j) {
    for (int side = 0; side < 2; ++side) {
      for (int s = 0; s < kPerFace; ++s) {
        Vector x(n);
        for (int i = 0; i < n; ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
        x[j] = side ? box.hi[j] : box.lo[j];
        rho = std::min(rho, value(x));
      }
    }
  }
  const double level = fraction * rho;
  RowMatrix out(static_cast<Eigen::Index>(count), n);
  std::size_t got = 0;
  std::size_t tries = 0;
  while (got < count) {
    if (++tries > 1000 * count + 100000) fail(Errc::InvalidArgument, "level set is too small to sample");
    Vector x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
    if (value(x) <= level) out.row(static_cast<Eigen::Index>(got++)) = x.transpose();
  }
  return out;
}

IssResult iss_probe(const MpcProblem& problem, const Controller& controller, const RowMatrix& starts,
                    const DisturbanceSpec& dist, int steps, const StateBox& box, double radius, int tail) {
  require(steps >= tail && tail >= 1, "steps must cover the terminal window");
  require(starts.cols() == problem.n(), "start states have wrong dimension");
  IssResult out;
  out.trajectories = static_cast<int>(starts.rows());
  for (Eigen::Index i = 0; i < starts.rows(); ++i) {
    DisturbanceSpec d = dist;
    d.seed = dist.seed + static_cast<std::uint64_t>(i);
    const SimResult sim = simulate(problem, controller, starts.row(i).transpose(), steps, d);
    bool ok = !sim.failed;
    for (Eigen::Index k = 0; k < sim.trajectory.rows(); ++k) {
      if (!box.contains(sim.trajectory.row(k).transpose())) {
        out.all_inside = false;
        ok = false;
        break;
      }
    }
    double terminal = 0.0;
    if (!sim.failed) {
      for (Eigen::Index k = sim.trajectory.rows() - tail; k < sim.trajectory.rows(); ++k) {
        terminal = std::max(terminal, sim.trajectory.row(k).cwiseAbs().maxCoeff());
      }
    } else {
      terminal = kInf;
    }
    out.max_terminal_norm = std::max(out.max_terminal_norm, terminal);
    if (terminal > radius) ok = false;
    if (!ok) ++out.failures;
  }
  out.passed = out.failures == 0;
  return out;
}

ClosedLoopComparison compare_closed_loop(const MpcProblem& problem, const std::function<Controller()>& make_reference,
                                         const std::function<Controller()>& make_candidate, const RowMatrix& starts,
                                         int steps, int jobs) {
  require(steps >= 1, "steps must be >= 1");
  require(starts.rows() > 0 && starts.cols() == problem.n(), "start states missing or of wrong dimension");
  const auto S = static_cast<std::size_t>(starts.rows());
  std::vector<double> ref(S), cand(S);
  std::vector<char> ok(S, 0);
  detail::parallel_slices(S, jobs, [&](std::size_t begin, std::size_t end, int) {
    const Controller r = make_reference();
    const Controller c = make_candidate();
    for (std::size_t i = begin; i < end; ++i) {
      const Vector x0 = starts.row(static_cast<Eigen::Index>(i)).transpose();
      const SimResult a = simulate(problem, r, x0, steps);
      const SimResult b = simulate(problem, c, x0, steps);
      if (a.failed || b.failed) continue;
      ref[i] = a.lambda;
      cand[i] = b.lambda;
      ok[i] = 1;
    }
  });
  ClosedLoopComparison out;
  double sr = 0.0, sc = 0.0;
  for (std::size_t i = 0; i < S; ++i) {
    if (!ok[i]) {
      ++out.failures;
      continue;
    }
    ++out.runs;
    sr += ref[i];
    sc += cand[i];
    out.lambda_reference.push_back(ref[i]);
    out.lambda_candidate.push_back(cand[i]);
    if (ref[i] > 0.0) out.max_relative_gap = std::max(out.max_relative_gap, std::abs(cand[i] - ref[i]) / ref[i]);
  }
  if (out.runs > 0) {
    out.mean_lambda_reference = sr / out.runs;
    out.mean_lambda_candidate = sc / out.runs;
    if (out.mean_lambda_reference > 0.0) {
      out.performance_loss = (out.mean_lambda_candidate - out.mean_lambda_reference) / out.mean_lambda_reference;
    }
  }
  return out;
}

namespace {

json rows_json(const RowMatrix& M) {
  json out = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    out.push_back(std::vector<double>(M.row(i).data(), M.row(i).data() + M.cols()));
  }
  return out;
}

}  // namespace

json sim_result_to_json(const SimResult& r) {
  json j = {{"trajectory", rows_json(r.trajectory)},
            {"inputs", rows_json(r.inputs)},
            {"lambda", r.lambda},
            {"violated", r.violated},
            {"failed", r.failed},
            {"steps_completed", r.steps_completed}};
  if (r.failed) j["failure"] = r.failure;
  return j;
}

json comparison_to_json(const ClosedLoopComparison& c) {
  return {{"mean_lambda_mpc", c.mean_lambda_reference},
          {"mean_lambda_tree", c.mean_lambda_candidate},
          {"performance_loss", c.performance_loss},
          {"max_relative_gap", c.max_relative_gap},
          {"runs", c.runs},
          {"failures", c.failures}};
}

json iss_to_json(const IssResult& r) {
  return {{"passed", r.passed},
          {"all_inside", r.all_inside},
          {"max_terminal_norm", r.max_terminal_norm},
          {"trajectories", r.trajectories},
          {"failures", r.failures}};
}

std::string trajectory_csv(const SimResult& r) {
  std::ostringstream out;
  out.precision(17);
  out << 'k';
  for (Eigen::Index j = 0; j < r.trajectory.cols(); ++j) out << ",x" << (j + 1);
  for (Eigen::Index j = 0; j < r.inputs.cols(); ++j) out << ",u" << (j + 1);
  out << '\n';
  for (Eigen::Index k = 0; k < r.trajectory.rows(); ++k) {
    out << k;
    for (Eigen::Index j = 0; j < r.trajectory.cols(); ++j) out << ',' << r.trajectory(k, j);
    for (Eigen::Index j = 0; j < r.inputs.cols(); ++j) {
      out << ',';
      if (k < r.inputs.rows()) out << r.inputs(k, j);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace odtmpc
