#include "odtmpc/errors.hpp"
#include "odtmpc/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

namespace odtmpc {

using nlohmann::json;

namespace {

// Keeps results observable so the timed calls are not optimised away.
volatile double g_sink = 0.0;

}  // namespace

TimingReport benchmark_timing(const std::vector<NamedController>& controllers, const RowMatrix& states,
                              int repetitions, int rounds) {
  require(repetitions >= 1, "repetitions must be >= 1");
  require(rounds >= 1, "rounds must be >= 1");
  require(states.rows() > 0, "timing needs at least one state");
  require(!controllers.empty(), "timing needs at least one controller");
  using Clock = std::chrono::steady_clock;
  const auto S = static_cast<std::size_t>(states.rows());
  std::vector<Vector> xs(S);
  for (std::size_t i = 0; i < S; ++i) xs[i] = states.row(static_cast<Eigen::Index>(i)).transpose();

  TimingReport report;
  report.samples = S;
  report.repetitions = repetitions;
  for (const auto& nc : controllers) {
    const int reps = nc.repetitions > 0 ? nc.repetitions : repetitions;
    require(nc.raw || nc.controller, "timing entry has no controller");
    std::vector<double> u(64);
    const auto eval = [&](const Vector& x) {
      if (nc.raw) {
        nc.raw(x.data(), u.data());
        return u[0];
      }
      return nc.controller(x)[0];
    };
    for (const auto& x : xs) g_sink = g_sink + eval(x);  // warm-up, untimed
    std::vector<double> per_state(S, kInf);
    for (int round = 0; round < rounds; ++round) {
      for (std::size_t i = 0; i < S; ++i) {
        const auto t0 = Clock::now();
        double acc = 0.0;
        for (int r = 0; r < reps; ++r) acc += eval(xs[i]);
        const auto t1 = Clock::now();
        g_sink = g_sink + acc;
        per_state[i] = std::min(per_state[i], std::chrono::duration<double>(t1 - t0).count() / reps);
      }
    }
    TimingRow row;
    row.name = nc.name;
    double sum = 0.0;
    for (double t : per_state) sum += t;
    row.mean = sum / static_cast<double>(S);
    std::vector<double> sorted = per_state;
    std::sort(sorted.begin(), sorted.end());
    row.worst = sorted.back();
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(S)));
    row.p99 = sorted[std::max<std::size_t>(rank, 1) - 1];
    report.rows.push_back(row);
  }
  return report;
}

NamedController tree_timing_entry(const ObliqueTree& tree, int repetitions) {
  require(tree.m <= 64, "tree has too many outputs for the timing buffer");
  auto shared = std::make_shared<const ObliqueTree>(tree);
  NamedController nc;
  nc.name = "tree";
  nc.controller = tree_controller(tree);
  nc.repetitions = repetitions;
  nc.raw = [shared](const double* x, double* u) { predict_into(*shared, x, u); };
  return nc;
}

json timing_to_json(const TimingReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) rows.push_back({{"name", row.name}, {"mean_s", row.mean}, {"worst_s", row.worst}, {"p99_s", row.p99}});
  return {{"controllers", rows}, {"samples", r.samples}, {"repetitions", r.repetitions}};
}

}  // namespace odtmpc
