#include "oracles.hpp"

#include "odtmpc/dataset.hpp"
#include "odtmpc/evaluation.hpp"
#include "odtmpc/explicit_law.hpp"
#include "odtmpc/qp.hpp"

#include <doctest.h>

#include <memory>

using namespace odtmpc;

namespace {

const StateBox kBox1 = StateBox::uniform(2, -1.5, 1.5);

std::shared_ptr<std::vector<RegionLaw>> case1_laws() {
  ExplicitOptions opt;
  opt.domain = kBox1;
  return std::make_shared<std::vector<RegionLaw>>(enumerate_explicit(case1_problem(), opt));
}

Controller explicit_controller(std::shared_ptr<std::vector<RegionLaw>> laws) {
  return [laws](const Vector& x) { return eval_explicit(*laws, x); };
}

Controller zero_controller(int m) {
  return [m](const Vector&) { return Vector::Zero(m); };
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("closed loop from the origin has zero cost") {
  const SimResult r = simulate(case1_problem(), mpc_controller(case1_problem()), Vector::Zero(2), 20);
  CHECK(r.lambda == 0.0);
  CHECK(r.steps_completed == 20);
  CHECK(r.trajectory.rows() == 21);
  CHECK_FALSE(r.failed);
}

TEST_CASE("lambda metric examples") {
  CHECK(lambda_metric(RowMatrix::Zero(21, 2), Matrix::Identity(2, 2)) == 0.0);
  RowMatrix e1 = RowMatrix::Zero(21, 2);
  e1.col(0).setOnes();
  CHECK(lambda_metric(e1, Matrix::Identity(2, 2)) == doctest::Approx(1.0).epsilon(1e-15));
  // Only t = 1..20 count.
  RowMatrix late = RowMatrix::Zero(30, 1);
  late(0, 0) = 100.0;
  late(25, 0) = 100.0;
  CHECK(lambda_metric(late, Matrix::Identity(1, 1)) == 0.0);
  CHECK(oracle::thrown_code([] { lambda_metric(RowMatrix::Zero(20, 2), Matrix::Identity(2, 2)); }) ==
        Errc::TooShort);
}

TEST_CASE("mpc, explicit law and compiled tree give the same trajectories") {
  const MpcProblem p = case1_problem();
  const auto laws = case1_laws();
  const ObliqueTree tree = tree_from_regions(*laws);
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    Vector x0(2);
    x0 << rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5);
    const SimResult a = simulate(p, mpc_controller(p), x0, 20);
    const SimResult b = simulate(p, explicit_controller(laws), x0, 20);
    const SimResult c = simulate(p, tree_controller(tree), x0, 20);
    CHECK((a.trajectory - b.trajectory).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((a.trajectory - c.trajectory).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(std::abs(a.lambda - c.lambda) <= 1e-6);
  }
}

TEST_CASE("trajectories replay exactly") {
  const MpcProblem p = case1_problem();
  DisturbanceSpec dist;
  dist.w_bound = 0.01;
  dist.e_bound = 0.01;
  dist.seed = 3;
  Vector x0(2);
  x0 << 1.0, -0.5;
  const SimResult a = simulate(p, mpc_controller(p), x0, 30, dist);
  const SimResult b = simulate(p, mpc_controller(p), x0, 30, dist);
  CHECK(a.trajectory == b.trajectory);
  CHECK(a.inputs == b.inputs);
  for (int k = 0; k < 30; ++k) {
    const Vector x = a.trajectory.row(k).transpose();
    const Vector next = p.system.A * x + p.system.B * a.inputs.row(k).transpose() + a.process_noise.row(k).transpose();
    CHECK((next - a.trajectory.row(k + 1).transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(a.process_noise.row(k).cwiseAbs().maxCoeff() <= 0.01);
  }
  CHECK(a.lambda == lambda_metric(a.trajectory, p.Q));
  CHECK(a.lambda >= 0.0);
  dist.seed = 4;
  CHECK_FALSE(simulate(p, mpc_controller(p), x0, 30, dist).trajectory == a.trajectory);
}

TEST_CASE("inputs are clamped exactly") {
  const MpcProblem p = case1_problem();
  const Controller wild = [](const Vector& x) { return Vector::Constant(1, x[0] > 0 ? 1e9 : -1e9); };
  Vector x0(2);
  x0 << 0.5, -0.5;
  const SimResult r = simulate(p, wild, x0, 25);
  for (Eigen::Index k = 0; k < r.inputs.rows(); ++k) {
    CHECK(r.inputs(k, 0) <= p.u_max[0]);
    CHECK(r.inputs(k, 0) >= p.u_min[0]);
    CHECK(std::abs(r.inputs(k, 0)) == 2.0);
  }
}

TEST_CASE("controller failures are recorded") {
  const MpcProblem p = case1_problem();
  int calls = 0;
  const Controller flaky = [&calls](const Vector&) -> Vector {
    if (++calls > 3) throw std::runtime_error("boom");
    return Vector::Zero(1);
  };
  const SimResult r = simulate(p, flaky, Vector::Ones(2), 10);
  CHECK(r.failed);
  CHECK(r.steps_completed == 3);
  CHECK(r.trajectory.rows() == 4);
  CHECK_FALSE(r.failure.empty());
  CHECK(oracle::thrown_code([&] { simulate(p, zero_controller(1), Vector::Ones(2), 0); }) == Errc::InvalidArgument);
  DisturbanceSpec neg;
  neg.w_bound = -1.0;
  CHECK(oracle::thrown_code([&] { simulate(p, zero_controller(1), Vector::Ones(2), 5, neg); }) ==
        Errc::InvalidArgument);
}

TEST_CASE("error bound formula") {
  CHECK(ErrorBoundReport::formula(0, 0, 0, 0, 4, 0.02) == 0.0);
  CHECK(ErrorBoundReport::formula(0.1, 0.0, 1.0, 1.0, 4, 0.02) == doctest::Approx(0.14).epsilon(1e-14));
}

TEST_CASE("error bound report on the compiled first case tree") {
  const MpcProblem p = case1_problem();
  const ObliqueTree tree = tree_from_regions(*case1_laws());
  const Dataset d = generate_dataset(p, grid_states(kBox1, 0.05), 1, 0.05, kBox1, "case1");
  const RowMatrix test = uniform_states(kBox1, 2000, 4);
  const ErrorBoundReport r = error_bound_report(tree, p, d, test);
  CHECK(r.delta_dt <= 1e-9);
  CHECK(r.j_max <= 1e-7);
  CHECK(r.empirical_max <= 1e-9);
  CHECK(r.bound >= r.empirical_max);
  CHECK_FALSE(r.violated);
  CHECK(r.bound == ErrorBoundReport::formula(r.delta_dt, r.j_max, r.k_dt, r.k_max, r.n, r.delta_x));
  REQUIRE(r.k_max_certified.has_value());
  CHECK(r.k_max <= *r.k_max_certified + 1e-6);
  CHECK(r.test_states == 2000);
  const auto j = error_bound_to_json(r);
  CHECK(j.contains("bound"));
  CHECK(j.contains("empirical_max"));
}

TEST_CASE("k max of a constant law is zero") {
  Dataset d;
  d.box = kBox1;
  d.delta_x = 0.1;
  d.X = grid_states(d.box, d.delta_x);
  d.U = RowMatrix::Constant(d.X.rows(), 1, 0.7);
  KMaxOptions opt;
  opt.certify = false;
  CHECK(estimate_k_max(case1_problem(), d, opt).estimate == 0.0);
}

TEST_CASE("k max of an unconstrained law is the LQR gain norm") {
  Rng rng(5);
  MpcProblem p = oracle::random_stable_problem(rng, 2, 1, 4);
  p.u_min.setConstant(-kInf);
  p.u_max.setConstant(kInf);
  const StateBox box = StateBox::uniform(2, -1.0, 1.0);
  const Dataset d = generate_dataset(p, grid_states(box, 0.05), 1, 0.05, box, "lqr");
  const double K = oracle::finite_horizon_lqr_gain(p).norm();
  const KMaxEstimate e = estimate_k_max(p, d);
  CHECK(e.estimate <= K * (1 + 1e-9));
  // Grid directions are 45 degrees apart, so the worst alignment loses cos(22.5 deg).
  CHECK(e.estimate >= K * 0.92);
  REQUIRE(e.certified.has_value());
  CHECK(*e.certified == doctest::Approx(K).epsilon(1e-9));
  CHECK(e.pairs > 0);
}

TEST_CASE("k max of the first case stays below the certified value") {
  const MpcProblem p = case1_problem();
  const Dataset d = generate_dataset(p, grid_states(kBox1, 0.02), 1, 0.02, kBox1, "case1");
  const KMaxEstimate e = estimate_k_max(p, d);
  REQUIRE(e.certified.has_value());
  CHECK(e.estimate <= *e.certified + 1e-6);
  CHECK(e.estimate >= 0.9 * *e.certified);
}

TEST_CASE("iss probe examples") {
  const MpcProblem p = case1_problem();
  const RowMatrix starts = level_set_states(p, kBox1, 20, 0.9, 3);
  REQUIRE(starts.rows() == 20);
  for (Eigen::Index i = 0; i < starts.rows(); ++i) CHECK(kBox1.contains(starts.row(i).transpose()));

  const IssResult nominal = iss_probe(p, mpc_controller(p), starts, {}, 50, kBox1, 1e-3);
  CHECK(nominal.passed);
  CHECK(nominal.max_terminal_norm <= 1e-3);

  DisturbanceSpec dist;
  dist.w_bound = 0.01;
  dist.e_bound = 0.01;
  dist.mode = DisturbanceSpec::Mode::SignFlip;
  const IssResult noisy = iss_probe(p, mpc_controller(p), starts, dist, 50, kBox1, 0.1);
  CHECK(noisy.passed);
  CHECK(noisy.all_inside);
  CHECK(noisy.trajectories == 20);

  MpcProblem unstable = oracle::scalar_problem(1.3, 1.0, 1.0, 1.0, 1.0, 1.0);
  const StateBox box = StateBox::uniform(1, -2.0, 2.0);
  RowMatrix s(3, 1);
  s << 0.5, -0.5, 1.0;
  const IssResult bad = iss_probe(unstable, zero_controller(1), s, {}, 50, box, 0.1);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.all_inside);
  CHECK(bad.failures == 3);
}

TEST_CASE("level set starts respect the value level") {
  const MpcProblem p = case1_problem();
  const RowMatrix starts = level_set_states(p, kBox1, 50, 0.5, 8);
  // Dense scan of the box boundary for the smallest value.
  double rho = kInf;
  for (int k = 0; k <= 3000; ++k) {
    const double s = -1.5 + 3.0 * k / 3000.0;
    for (const auto& c : {Vector{{-1.5, s}}, Vector{{1.5, s}}, Vector{{s, -1.5}}, Vector{{s, 1.5}}})
      rho = std::min(rho, mpc_value(p, c));
  }
  for (Eigen::Index i = 0; i < starts.rows(); ++i) CHECK(mpc_value(p, starts.row(i).transpose()) <= 0.5 * rho * 1.01);
}

TEST_CASE("closed loop comparison of a controller with itself") {
  const MpcProblem p = case1_problem();
  const RowMatrix starts = uniform_states(kBox1, 12, 2);
  const auto cmp = compare_closed_loop(p, [&] { return mpc_controller(p); }, [&] { return mpc_controller(p, false); },
                                       starts, 20, 3);
  CHECK(cmp.runs == 12);
  CHECK(cmp.failures == 0);
  CHECK(std::abs(cmp.performance_loss) <= 1e-9);
  CHECK(cmp.max_relative_gap <= 1e-9);
  CHECK(cmp.lambda_reference.size() == 12);
  const auto serial = compare_closed_loop(p, [&] { return mpc_controller(p); }, [&] { return zero_controller(1); },
                                          starts, 20, 1);
  const auto threaded = compare_closed_loop(p, [&] { return mpc_controller(p); }, [&] { return zero_controller(1); },
                                            starts, 20, 4);
  CHECK(serial.lambda_candidate == threaded.lambda_candidate);
  CHECK(serial.performance_loss > 0.0);
}

TEST_CASE("timing report rows") {
  const ObliqueTree tree = tree_from_regions(*case1_laws());
  const RowMatrix one = RowMatrix::Constant(1, 2, 0.3);
  const TimingReport r = benchmark_timing({tree_timing_entry(tree)}, one, 50);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].worst >= r.rows[0].p99);
  CHECK(r.rows[0].p99 >= r.rows[0].mean);
  CHECK(r.rows[0].mean > 0.0);
  CHECK(r.samples == 1);

  const RowMatrix many = uniform_states(kBox1, 40, 1);
  NamedController mpc{"mpc", mpc_controller(case1_problem()), 2, {}};
  const TimingReport two = benchmark_timing({tree_timing_entry(tree), mpc}, many, 20);
  REQUIRE(two.rows.size() == 2);
  for (const auto& row : two.rows) {
    CHECK(row.worst >= row.p99);
    CHECK(row.p99 >= row.mean);
    CHECK(row.mean > 0.0);
  }
  CHECK(timing_to_json(two)["controllers"].size() == 2);
  CHECK(oracle::thrown_code([&] { benchmark_timing({mpc}, many, 0); }) == Errc::InvalidArgument);
}

TEST_CASE("trajectory csv has one line per state") {
  const MpcProblem p = case1_problem();
  const SimResult r = simulate(p, mpc_controller(p), Vector::Ones(2), 5);
  const std::string csv = trajectory_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') >= 6);
  CHECK(sim_result_to_json(r).contains("lambda"));
}

}  // TEST_SUITE
