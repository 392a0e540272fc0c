#include "oracles.hpp"

#include "odtmpc/dataset.hpp"
#include "odtmpc/explicit_law.hpp"
#include "odtmpc/lp.hpp"
#include "odtmpc/lyapunov.hpp"
#include "odtmpc/qp.hpp"

#include <doctest.h>

using namespace odtmpc;

namespace {

StateBox case1_box() { return StateBox::uniform(2, -1.5, 1.5); }

std::vector<RegionLaw> case1_regions() {
  ExplicitOptions opt;
  opt.domain = case1_box();
  return enumerate_explicit(case1_problem(), opt);
}

MpcProblem unconstrained(MpcProblem p) {
  p.u_min.setConstant(-kInf);
  p.u_max.setConstant(kInf);
  return p;
}

}  // namespace

TEST_SUITE("mpc_core") {

TEST_CASE("lyapunov of a zero matrix is the weight itself") {
  const Matrix P = discrete_lyapunov(Matrix::Zero(3, 3), Matrix::Identity(3, 3));
  CHECK((P - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("lyapunov scalar") {
  const Matrix P = discrete_lyapunov(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0));
  CHECK(P(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("lyapunov for the first case matches plain iteration") {
  const MpcProblem p = case1_problem();
  const Matrix& A = p.system.A;
  const Matrix I = Matrix::Identity(2, 2);
  const Matrix P = discrete_lyapunov(A, I);
  CHECK((P - A.transpose() * P * A - I).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((P - oracle::lyapunov_by_iteration(A, I)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.P - P).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("lyapunov rejects unstable matrices") {
  Matrix A(2, 2);
  A << 1.05, 0.0, 0.0, 0.3;
  CHECK(oracle::thrown_code([&] { discrete_lyapunov(A, Matrix::Identity(2, 2)); }) == Errc::NonConvergent);
}

TEST_CASE("condense scalar one-step algebra") {
  MpcProblem p = oracle::scalar_problem(1.0, 1.0, 1.0, 1.0, 1.0, 2.0);
  p.u_min.setConstant(-kInf);
  p.u_max.setConstant(kInf);
  const CondensedQp qp = condense(p);
  REQUIRE(qp.H.rows() == 1);
  CHECK(qp.H(0, 0) == doctest::Approx(2.0));
  CHECK(qp.F(0, 0) == doctest::Approx(1.0));
  CHECK(qp.num_rows() == 0);
}

TEST_CASE("condense first case is a symmetric positive definite 2x2") {
  const CondensedQp qp = condense(case1_problem());
  REQUIRE(qp.H.rows() == 2);
  REQUIRE(qp.H.cols() == 2);
  CHECK((qp.H - qp.H.transpose()).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(is_symmetric_pd(qp.H));
  CHECK(qp.num_rows() == 4);
}

TEST_CASE("condensed cost equals a direct rollout") {
  Rng rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const int m = 1 + static_cast<int>(rng.below(2));
    const int N = 1 + static_cast<int>(rng.below(6));
    const MpcProblem p = oracle::random_stable_problem(rng, n, m, N);
    const CondensedQp qp = condense(p);
    Vector x0(n), U(N * m);
    for (int j = 0; j < n; ++j) x0[j] = rng.uniform(-2.0, 2.0);
    for (int j = 0; j < N * m; ++j) U[j] = rng.uniform(-2.0, 2.0);
    const double direct = oracle::rollout_cost(p, x0, U);
    worst = std::max(worst, std::abs(qp.cost(x0, U) - direct) / std::max(1.0, std::abs(direct)));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("condensed constraint rows reproduce the bounds") {
  MpcProblem p = case1_problem();
  p.x_min = Vector::Constant(2, -1.0);
  p.x_max = Vector::Constant(2, 1.0);
  const CondensedQp qp = condense(p);
  // 2 inputs x 2 sides + 2 predicted states x 2 components x 2 sides.
  CHECK(qp.num_rows() == 4 + 8);
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x0(2), U(2);
    x0 << rng.uniform(-1, 1), rng.uniform(-1, 1);
    U << rng.uniform(-3, 3), rng.uniform(-3, 3);
    const Vector lhs = qp.G * U - qp.w - qp.E * x0;
    Vector x1 = p.system.A * x0 + p.system.B * U.segment(0, 1);
    Vector x2 = p.system.A * x1 + p.system.B * U.segment(1, 1);
    bool feasible = std::abs(U[0]) <= 2 && std::abs(U[1]) <= 2 && x1.cwiseAbs().maxCoeff() <= 1 &&
                    x2.cwiseAbs().maxCoeff() <= 1;
    CHECK(feasible == (lhs.maxCoeff() <= 0.0));
  }
}

TEST_CASE("qp at the origin") {
  const CondensedQp qp = condense(case1_problem());
  const QpSolution s = solve_qp(qp, Vector::Zero(2));
  CHECK(s.status == QpStatus::Optimal);
  CHECK(s.u_seq.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.objective == doctest::Approx(0.0));
}

TEST_CASE("qp scalar one variable") {
  const MpcProblem p = oracle::scalar_problem(1.0, 1.0, 1.0, 1.0, 1.0, 2.0);
  const CondensedQp qp = condense(p);
  const QpSolution s = solve_qp(qp, Vector::Constant(1, 1.0));
  CHECK(s.status == QpStatus::Optimal);
  CHECK(s.u0[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(solve_qp(qp, Vector::Constant(1, 10.0)).u0[0] == -2.0);
  CHECK(solve_qp(qp, Vector::Constant(1, -10.0)).u0[0] == 2.0);
}

TEST_CASE("qp solutions satisfy their residual contract and bounds") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const MpcProblem p = oracle::random_stable_problem(rng, 3, 2, 4);
    const CondensedQp qp = condense(p);
    Vector x0(3);
    for (int j = 0; j < 3; ++j) x0[j] = rng.uniform(-5.0, 5.0);
    const QpSolution s = solve_qp(qp, x0);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK(s.kkt_residual <= 1e-9);
    CHECK(s.u_seq.maxCoeff() <= 1.0 + 1e-8);
    CHECK(s.u_seq.minCoeff() >= -1.0 - 1e-8);
    CHECK(s.objective == doctest::Approx(oracle::rollout_cost(p, x0, s.u_seq)).epsilon(1e-9));
  }
}

TEST_CASE("qp minimises the cost over the feasible box") {
  // Random feasible perturbations never beat the reported optimum.
  Rng rng(3);
  const MpcProblem p = case2_problem();
  const CondensedQp qp = condense(p);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x0(4);
    for (int j = 0; j < 4; ++j) x0[j] = rng.uniform(-1.0, 1.0);
    const QpSolution s = solve_qp(qp, x0);
    REQUIRE(s.status == QpStatus::Optimal);
    const double best = oracle::rollout_cost(p, x0, s.u_seq);
    for (int k = 0; k < 50; ++k) {
      Vector U = s.u_seq;
      for (int j = 0; j < U.size(); ++j) U[j] = std::clamp(U[j] + rng.uniform(-1e-3, 1e-3), -0.2, 0.2);
      CHECK(oracle::rollout_cost(p, x0, U) >= best - 1e-10);
    }
  }
}

TEST_CASE("qp reports infeasible state constraints") {
  MpcProblem p = case1_problem();
  p.x_min = Vector::Constant(2, -0.1);
  p.x_max = Vector::Constant(2, 0.1);
  const CondensedQp qp = condense(p);
  Vector x0(2);
  x0 << 1.4, 1.4;
  CHECK(solve_qp(qp, x0).status == QpStatus::Infeasible);
}

TEST_CASE("mpc control saturates deep in the first case corners") {
  const MpcProblem p = case1_problem();
  Vector x(2);
  x << 1.5, 1.5;
  CHECK(mpc_control(p, x)[0] == -2.0);
  x << -1.5, -1.5;
  CHECK(mpc_control(p, x)[0] == 2.0);
  CHECK(mpc_control(p, Vector::Zero(2))[0] == 0.0);
}

TEST_CASE("mpc control in the second case respects the input bound") {
  const MpcProblem p = case2_problem();
  MpcController ctl(p);
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    Vector x(4);
    for (int j = 0; j < 4; ++j) x[j] = rng.uniform(-1.0, 1.0);
    const double u = ctl.control(x)[0];
    CHECK(std::abs(u) <= 0.2 + 1e-8);
  }
}

TEST_CASE("warm and cold controllers agree") {
  const MpcProblem p = case2_problem();
  MpcController warm(p, true), cold(p, false);
  Rng rng(9);
  Vector x(4);
  for (int j = 0; j < 4; ++j) x[j] = rng.uniform(-1.0, 1.0);
  for (int k = 0; k < 40; ++k) {
    const Vector uw = warm.control(x);
    const Vector uc = cold.control(x);
    CHECK(std::abs(uw[0] - uc[0]) <= 1e-9);
    x = p.system.step(x, uw);
  }
}

TEST_CASE("explicit law of an unconstrained problem is the LQR gain") {
  Rng rng(17);
  const MpcProblem p = unconstrained(oracle::random_stable_problem(rng, 3, 2, 5));
  const auto laws = enumerate_explicit(p);
  REQUIRE(laws.size() == 1);
  const Matrix K = oracle::finite_horizon_lqr_gain(p);
  CHECK((laws[0].F + K).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(laws[0].g.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(eval_explicit(laws, Vector::Zero(3)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("explicit law of the first case has three regions") {
  const auto laws = case1_regions();
  CHECK(laws.size() == 3);
  const MpcProblem p = case1_problem();
  for (const auto& r : laws) {
    CHECK(r.radius > 1e-9);
    CHECK(std::abs(r.evaluate(r.center)[0] - mpc_control(p, r.center)[0]) <= 1e-7);
  }
}

TEST_CASE("explicit law of the first case without merging keeps every active set") {
  ExplicitOptions opt;
  opt.domain = case1_box();
  opt.merge_equal_laws = false;
  const auto laws = enumerate_explicit(case1_problem(), opt);
  CHECK(laws.size() >= 3);
  size_t sets = 0;
  for (const auto& r : laws) sets += r.active_sets.size();
  CHECK(sets == laws.size());
}

TEST_CASE("explicit law of a scalar problem is the clipped gain") {
  const double a = 1.2, b = 0.7, q = 1.0, r = 0.5, pw = 2.0;
  const MpcProblem p = oracle::scalar_problem(a, b, q, r, pw, 1.0);
  const auto laws = enumerate_explicit(p);
  REQUIRE(laws.size() == 3);
  const double h = r + b * b * pw;
  const double f = a * b * pw;
  Rng rng(4);
  for (int k = 0; k < 500; ++k) {
    const double x = rng.uniform(-5.0, 5.0);
    CHECK(eval_explicit(laws, Vector::Constant(1, x))[0] ==
          doctest::Approx(oracle::scalar_law(a, b, r, pw, 1.0, x)).epsilon(1e-12));
  }
  // Breakpoints at |x| = H / F.
  const double edge = h / f;
  CHECK(eval_explicit(laws, Vector::Constant(1, edge + 1e-6))[0] == doctest::Approx(-1.0));
  CHECK(eval_explicit(laws, Vector::Constant(1, edge - 1e-3))[0] > -1.0);
}

TEST_CASE("explicit law agrees with the QP on a grid") {
  const auto laws = case1_regions();
  const MpcProblem p = case1_problem();
  const RowMatrix X = grid_states(case1_box(), 0.1);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Vector x = X.row(i).transpose();
    worst = std::max(worst, std::abs(eval_explicit(laws, x)[0] - mpc_control(p, x)[0]));
  }
  CHECK(X.rows() == 961);
  CHECK(worst <= 1e-6);
}

TEST_CASE("explicit laws agree on region boundaries") {
  const auto laws = case1_regions();
  Rng rng(6);
  const auto which = [&](const Vector& x) {
    for (std::size_t i = 0; i < laws.size(); ++i)
      if (laws[i].contains(x, 0.0)) return static_cast<int>(i);
    return -1;
  };
  int checked = 0;
  for (int trial = 0; trial < 2000 && checked < 100; ++trial) {
    Vector x(2), y(2);
    x << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    y << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    const int rx = which(x);
    if (rx < 0 || which(y) == rx || which(y) < 0) continue;
    for (int it = 0; it < 80; ++it) {
      const Vector mid = 0.5 * (x + y);
      (which(mid) == rx ? x : y) = mid;
    }
    const int ry = which(y);
    if (ry < 0 || ry == rx) continue;
    const Vector mid = 0.5 * (x + y);
    CHECK(std::abs(laws[static_cast<std::size_t>(rx)].evaluate(mid)[0] -
                   laws[static_cast<std::size_t>(ry)].evaluate(mid)[0]) <= 1e-7);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("mpc law is Lipschitz with the largest region gain") {
  const auto laws = case1_regions();
  const double K = max_gain_norm(laws);
  const MpcProblem p = case1_problem();
  Rng rng(10);
  for (int trial = 0; trial < 500; ++trial) {
    Vector x(2), y(2);
    x << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    y << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    CHECK((mpc_control(p, x) - mpc_control(p, y)).norm() <= K * (x - y).norm() + 1e-9);
  }
}

TEST_CASE("eval explicit outside the covered domain") {
  const auto laws = case1_regions();
  Vector x(2);
  x << 3.0, 3.0;
  CHECK(oracle::thrown_code([&] { eval_explicit(laws, x); }) == Errc::NotCovered);
}

TEST_CASE("explicit enumeration guards") {
  ExplicitOptions opt;
  opt.max_candidates = 8;
  CHECK(oracle::thrown_code([&] { enumerate_explicit(case1_problem(), opt); }) == Errc::TooLarge);
  MpcProblem p = case1_problem();
  p.x_min = Vector::Constant(2, -1.0);
  p.x_max = Vector::Constant(2, 1.0);
  CHECK(oracle::thrown_code([&] { enumerate_explicit(p); }) == Errc::InvalidArgument);
}

TEST_CASE("lp and chebyshev ball on a unit square") {
  Matrix A(4, 2);
  A << 1, 0, -1, 0, 0, 1, 0, -1;
  Vector b = Vector::Ones(4);
  Vector c(2);
  c << 1.0, 2.0;
  const LpResult r = solve_lp(c, A, b);
  CHECK(r.status == LpStatus::Optimal);
  CHECK(r.objective == doctest::Approx(3.0));
  const ChebyshevBall ball = chebyshev_ball(A, b);
  CHECK(ball.feasible);
  CHECK(ball.radius == doctest::Approx(1.0));
  Vector infeasible_b(4);
  infeasible_b << -1, -1, 1, 1;
  CHECK(solve_lp(c, A, infeasible_b).status == LpStatus::Infeasible);
}

TEST_CASE("problem validation") {
  MpcProblem p = case1_problem();
  p.R(0, 0) = 0.0;
  CHECK(oracle::thrown_code([&] { p.validate(); }) == Errc::InvalidArgument);
  p = case1_problem();
  p.u_min[0] = 3.0;
  CHECK(oracle::thrown_code([&] { p.validate(); }) == Errc::InvalidArgument);
  p = case1_problem();
  p.Q(0, 0) = -1.0;
  CHECK(oracle::thrown_code([&] { p.validate(); }) == Errc::InvalidArgument);
  CHECK(oracle::thrown_code([] { builtin_problem("case9"); }) == Errc::InvalidArgument);
}

TEST_CASE("problem json roundtrip") {
  for (const char* id : {"case1", "case2"}) {
    const MpcProblem p = builtin_problem(id);
    const MpcProblem q = problem_from_json(problem_to_json(p));
    CHECK(q.horizon == p.horizon);
    CHECK(q.system.A == p.system.A);
    CHECK(q.system.B == p.system.B);
    CHECK(q.Q == p.Q);
    CHECK(q.R == p.R);
    CHECK(q.P == p.P);
    CHECK(q.u_min == p.u_min);
    CHECK(q.u_max == p.u_max);
    CHECK(q.x_min == p.x_min);
  }
}

TEST_CASE("problem constants") {
  const MpcProblem c1 = case1_problem();
  CHECK(c1.n() == 2);
  CHECK(c1.m() == 1);
  CHECK(c1.horizon == 2);
  CHECK(c1.system.A(0, 0) == 0.7326);
  CHECK(c1.system.A(0, 1) == -0.0861);
  CHECK(c1.system.A(1, 0) == 0.1722);
  CHECK(c1.system.A(1, 1) == 0.9909);
  CHECK(c1.system.B(0, 0) == 0.0609);
  CHECK(c1.system.B(1, 0) == 0.0064);
  CHECK(c1.R(0, 0) == 0.01);
  CHECK(c1.u_max[0] == 2.0);
  const MpcProblem c2 = case2_problem();
  CHECK(c2.n() == 4);
  CHECK(c2.u_max[0] == 0.2);
  CHECK(c2.u_min[0] == -0.2);
  CHECK(c2.horizon == 17);
  CHECK(c2.R(0, 0) == 0.2);
  CHECK(c2.P == Matrix::Identity(4, 4));
  CHECK(c2.Q == Matrix::Identity(4, 4));
  const double A2[4][4] = {{0.4035, 0.3704, 0.2935, -0.7258},
                           {-0.2114, 0.6405, -0.6717, -0.0420},
                           {0.8368, 0.0175, -0.2806, 0.3808},
                           {-0.0724, 0.6001, 0.5552, 0.4919}};
  const double B2[4] = {1.6124, 0.4086, -1.4512, -0.6761};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(c2.system.A(i, j) == A2[i][j]);
    CHECK(c2.system.B(i, 0) == B2[i]);
  }
}

}  // TEST_SUITE
