#pragma once

#include "odtmpc/dataset.hpp"
#include "odtmpc/problem.hpp"
#include "odtmpc/tree.hpp"
#include "odtmpc/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace odtmpc {

using Controller = std::function<Vector(const Vector&)>;
/// Writes the input for state `x` into `u` without allocating.
using RawController = std::function<void(const double* x, double* u)>;

/// Bounded disturbances: process noise |w|_inf <= w_bound and state
/// estimation error |e|_inf <= e_bound, drawn per step.
struct DisturbanceSpec {
  enum class Mode { Uniform, SignFlip };
  double w_bound = 0.0;
  double e_bound = 0.0;
  std::uint64_t seed = 0;
  /// SignFlip draws every component at +-bound, the extreme points of the ball.
  Mode mode = Mode::Uniform;

  void validate() const;
};

struct SimResult {
  RowMatrix trajectory;  ///< (steps+1) x n, true states
  RowMatrix inputs;      ///< steps x m, applied (clamped) inputs
  RowMatrix process_noise;  ///< steps x n, the w(k) added to each step
  double lambda = 0.0;   ///< mean x'Qx over t = 1 .. min(steps, 20)
  bool violated = false; ///< a state bound breached by more than 1e-6
  bool failed = false;   ///< the controller threw; trajectory is truncated
  std::string failure;
  int steps_completed = 0;
};

/// x_hat = x + e, u = clamp(controller(x_hat)), x+ = A x + B u + w.
SimResult simulate(const MpcProblem& problem, const Controller& controller, const Vector& x0, int steps,
                   const DisturbanceSpec& dist = {});

/// (1/20) sum_{t=1}^{20} x(t)'Q x(t). Needs at least 21 rows (TooShort).
double lambda_metric(const RowMatrix& trajectory, const Matrix& Q);

Controller mpc_controller(const MpcProblem& problem, bool warm_start = true);
Controller tree_controller(const ObliqueTree& tree);

/// Optimal MPC cost V(x) = J(x, U*), used as a Lyapunov function.
double mpc_value(const MpcProblem& problem, const Vector& x);

/// Uniform draws from {x in box : V(x) <= fraction * rho}, where rho is the
/// smallest V found on the box boundary (sampled).
RowMatrix level_set_states(const MpcProblem& problem, const StateBox& box, std::size_t count, double fraction,
                           std::uint64_t seed);

struct IssResult {
  bool passed = false;
  bool all_inside = true;
  double max_terminal_norm = 0.0;  ///< max |x|_inf over the last `tail` states
  int trajectories = 0;
  int failures = 0;  ///< trajectories that left the box or missed the radius
};

/// Empirical input-to-state stability check. Trajectory i uses seed dist.seed + i.
IssResult iss_probe(const MpcProblem& problem, const Controller& controller, const RowMatrix& starts,
                    const DisturbanceSpec& dist, int steps, const StateBox& box, double radius, int tail = 5);

struct ClosedLoopComparison {
  double mean_lambda_reference = 0.0;
  double mean_lambda_candidate = 0.0;
  /// (mean candidate - mean reference) / mean reference.
  double performance_loss = 0.0;
  /// max_i |lambda_cand_i - lambda_ref_i| / lambda_ref_i over states with lambda_ref_i > 0.
  double max_relative_gap = 0.0;
  int runs = 0;
  int failures = 0;
  std::vector<double> lambda_reference;
  std::vector<double> lambda_candidate;
};

/// 20-step nominal rollouts of both controllers from every start state.
/// make_* are called once per worker so stateful controllers are not shared.
ClosedLoopComparison compare_closed_loop(const MpcProblem& problem, const std::function<Controller()>& make_reference,
                                         const std::function<Controller()>& make_candidate, const RowMatrix& starts,
                                         int steps = 20, int jobs = 1);

struct KMaxEstimate {
  double estimate = 0.0;            ///< max ratio over neighbouring grid pairs
  std::optional<double> certified;  ///< max region-gain norm when enumerable
  std::size_t pairs = 0;
  std::size_t probe_solves = 0;
};

struct KMaxOptions {
  /// Neighbours missing from a subsampled grid are labelled by solving the
  /// MPC problem, up to this many solves in total.
  std::size_t max_probe_solves = 20000;
  bool certify = true;
  int jobs = 1;
};

/// Empirical Lipschitz estimate of the MPC law from a grid dataset; pairs are
/// grid neighbours along every direction in {-1, 0, 1}^n.
KMaxEstimate estimate_k_max(const MpcProblem& problem, const Dataset& data, const KMaxOptions& options = {});

struct ErrorBoundReport {
  double delta_dt = 0.0;  ///< empirical max training-point error (estimate of the assumed bound)
  double j_max = 0.0;
  bool j_max_exact = false;
  double k_dt = 0.0;
  double k_max = 0.0;
  std::optional<double> k_max_certified;
  double delta_x = 0.0;
  int n = 0;
  double bound = 0.0;
  double empirical_max = 0.0;  ///< max |tree - MPC| over the test states
  std::size_t test_states = 0;
  bool violated = false;       ///< empirical_max > bound
  int degenerate_splits = 0;

  static double formula(double delta_dt, double j_max, double k_dt, double k_max, int n, double delta_x);
};

struct ErrorBoundOptions {
  int samples_per_facet = 2000;
  std::uint64_t seed = 7;
  bool exact_jump = false;  ///< LP supremum instead of sampling (depth <= 4, m = 1)
  KMaxOptions k_max;
  int jobs = 1;
};

ErrorBoundReport error_bound_report(const ObliqueTree& tree, const MpcProblem& problem, const Dataset& data,
                                    const RowMatrix& test_states, const ErrorBoundOptions& options = {});

struct TimingRow {
  std::string name;
  double mean = 0.0;
  double worst = 0.0;
  double p99 = 0.0;
};

struct TimingReport {
  std::vector<TimingRow> rows;
  std::size_t samples = 0;
  int repetitions = 0;
};

struct NamedController {
  std::string name;
  Controller controller;
  int repetitions = 0;  ///< 0 uses the benchmark default
  RawController raw;    ///< timed instead of `controller` when set
};

/// Timing entry for a tree using the allocation-free path.
NamedController tree_timing_entry(const ObliqueTree& tree, int repetitions = 0);

/// Single-threaded timing. After one untimed warm-up pass, every state is
/// evaluated `repetitions` times back to back; the per-evaluation time of a
/// state is the block time divided by `repetitions`, minimised over `rounds`
/// passes. Reports mean, worst and nearest-rank p99 over states.
TimingReport benchmark_timing(const std::vector<NamedController>& controllers, const RowMatrix& states,
                              int repetitions, int rounds = 3);

nlohmann::json sim_result_to_json(const SimResult& r);
nlohmann::json comparison_to_json(const ClosedLoopComparison& c);
nlohmann::json error_bound_to_json(const ErrorBoundReport& r);
nlohmann::json timing_to_json(const TimingReport& r);
nlohmann::json iss_to_json(const IssResult& r);
/// Per-step trajectory table: k, x1..xn, u1..um.
std::string trajectory_csv(const SimResult& r);

}  // namespace odtmpc
