#include "cli.hpp"

#include "odtmpc/dataset.hpp"
#include "odtmpc/errors.hpp"
#include "odtmpc/evaluation.hpp"
#include "odtmpc/explicit_law.hpp"
#include "odtmpc/kernels.hpp"
#include "odtmpc/problem.hpp"
#include "odtmpc/qp.hpp"
#include "odtmpc/train.hpp"
#include "odtmpc/tree.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iterator>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#ifndef ODTMPC_VERSION
#define ODTMPC_VERSION "0.0.0"
#endif

namespace odtmpc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
  return {{"jobs", 1},
          {"out", "."},
          {"dataset", {{"seed", 1}, {"csv", false}}},
          {"train", {{"depth", 2}, {"test_count", 10000}, {"test_seed", 99}}},
          {"evaluation",
           {{"starts", 100},
            {"steps", 20},
            {"seed", 5},
            {"test_count", 20000},
            {"w_bound", 0.01},
            {"e_bound", 0.01},
            {"iss_starts", 100},
            {"iss_steps", 50},
            {"iss_radius", 0.1},
            {"iss_level_fraction", 0.9},
            {"timing_states", 200},
            {"timing_repetitions", 200},
            {"samples_per_facet", 2000}}}};
}

// Dataset defaults that depend on the problem.
void fill_problem_defaults(json& cfg) {
  json& ds = cfg["dataset"];
  const std::string id = cfg.value("problem", std::string("case1"));
  if (!ds.contains("delta")) ds["delta"] = id == "case2" ? 0.02 : 0.01;
  if (!ds.contains("count")) ds["count"] = id == "case2" ? 100000 : 0;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::Io, "cannot read '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes.data(), bytes.size()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(Errc::Io, "write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, "'" + path + "': " + e.what());
  }
}

fs::path out_dir(const json& cfg) {
  const fs::path dir = cfg.at("out").get<std::string>();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(Errc::Io, "cannot create output directory '" + dir.string() + "'");
  return dir;
}

struct Manifest {
  std::string command;
  json inputs = json::object();
  json outputs = json::array();

  void input(const std::string& role, const std::string& path) {
    inputs[role] = {{"path", path}, {"fnv1a64", file_hash(path)}};
  }
  void write(const fs::path& dir, const json& cfg) const {
    write_json(dir / ("manifest_" + command + ".json"), {{"tool", "odtmpc"},
                                                          {"version", ODTMPC_VERSION},
                                                          {"command", command},
                                                          {"config", cfg},
                                                          {"inputs", inputs},
                                                          {"outputs", outputs}});
  }
};

// The problem named in the config; commands that load a dataset fall back to
// the problem it was generated for.
std::string problem_id(const json& cfg, const std::string& fallback = "case1") {
  return cfg.contains("problem") ? cfg.at("problem").get<std::string>() : fallback;
}

MpcProblem problem_of(const json& cfg, Manifest& manifest, const std::string& fallback = "case1") {
  const std::string id = problem_id(cfg, fallback);
  if (!is_builtin_problem(id)) manifest.input("problem", id);
  return load_problem(id);
}

StateBox box_of(const json& cfg, int n) {
  const json& ds = cfg.at("dataset");
  if (ds.contains("box")) {
    StateBox box;
    const auto lo = ds.at("box").at("lo").get<std::vector<double>>();
    const auto hi = ds.at("box").at("hi").get<std::vector<double>>();
    box.lo = Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size()));
    box.hi = Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()));
    if (box.dim() == 1 && n > 1) box = StateBox::uniform(n, box.lo[0], box.hi[0]);
    box.validate();
    require(box.dim() == n, "box dimension does not match the problem");
    return box;
  }
  return default_box(problem_id(cfg));
}

std::string dataset_path(const json& cfg) {
  const json& ds = cfg.at("dataset");
  if (ds.contains("path")) return ds.at("path").get<std::string>();
  return (fs::path(cfg.at("out").get<std::string>()) / "dataset.dsbin").string();
}

std::string tree_path(const json& cfg) {
  if (cfg.contains("tree")) return cfg.at("tree").get<std::string>();
  return (fs::path(cfg.at("out").get<std::string>()) / "tree.json").string();
}

int jobs_of(const json& cfg) {
  const int jobs = cfg.at("jobs").get<int>();
  require(jobs >= 1, "--jobs must be >= 1");
  return jobs;
}

// Uniform test states labelled by the MPC solver.
Dataset labelled_test_set(const MpcProblem& problem, const StateBox& box, std::size_t count, std::uint64_t seed,
                          int jobs, const std::string& id) {
  return generate_dataset(problem, uniform_states(box, count, seed), jobs, 0.0, box, id);
}

int cmd_generate(const json& cfg, std::ostream& out) {
  Manifest manifest{"generate"};
  const MpcProblem problem = problem_of(cfg, manifest);
  const json& ds = cfg.at("dataset");
  const double delta = ds.at("delta").get<double>();
  require(std::isfinite(delta) && delta > 0.0, "--delta must be positive");
  const auto count = ds.at("count").get<std::int64_t>();
  require(count >= 0, "--count must be >= 0");
  const auto seed = ds.at("seed").get<std::uint64_t>();
  const StateBox box = box_of(cfg, problem.n());
  const Grid grid(box, delta);
  RowMatrix states = count == 0 || static_cast<std::uint64_t>(count) >= grid.size()
                         ? grid_states(box, delta)
                         : subsample_grid(box, delta, static_cast<std::size_t>(count), seed);
  GenerateReport rep;
  const Dataset data = generate_dataset(problem, states, jobs_of(cfg), delta, box, problem_id(cfg), &rep);
  const fs::path dir = out_dir(cfg);
  save_dataset(data, (dir / "dataset.dsbin").string());
  manifest.outputs.push_back("dataset.dsbin");
  if (ds.at("csv").get<bool>()) {
    export_csv(data, (dir / "dataset.csv").string());
    manifest.outputs.push_back("dataset.csv");
  }
  manifest.write(dir, cfg);
  out << "rows " << rep.retained << " dropped " << rep.dropped << " grid " << grid.size() << " checksum "
      << hex64(dataset_checksum(data)) << '\n';
  return kExitOk;
}

TrainConfig train_config_of(const json& cfg) {
  TrainConfig tc = train_config_from_json(cfg.at("train"));
  tc.threads = jobs_of(cfg);
  tc.validate();
  return tc;
}

int cmd_train(const json& cfg, std::ostream& out) {
  Manifest manifest{"train"};
  const std::string dpath = dataset_path(cfg);
  if (!fs::exists(dpath)) fail(Errc::Io, "dataset '" + dpath + "' does not exist");
  manifest.input("dataset", dpath);
  const Dataset data = load_dataset(dpath);
  const json& tj = cfg.at("train");
  const int depth = tj.at("depth").get<int>();
  const TrainConfig tc = train_config_of(cfg);
  const TrainResult res = train(data, depth, tc);

  json report = train_report_to_json(res.report);
  report["depth"] = depth;
  const auto test_count = tj.at("test_count").get<std::int64_t>();
  if (test_count > 0) {
    const std::string id = problem_id(cfg, data.problem_id);
    const MpcProblem problem = problem_of(cfg, manifest, data.problem_id);
    require(problem.n() == data.n() && problem.m() == data.m(), "dataset does not match the problem");
    const Dataset test = labelled_test_set(problem, data.box, static_cast<std::size_t>(test_count),
                                           tj.at("test_seed").get<std::uint64_t>(), jobs_of(cfg), id);
    report["test_rmse"] = rmse(res.tree, test.X, test.U);
    report["test_rows"] = test.rows();
  }
  const fs::path dir = out_dir(cfg);
  save_tree(res.tree, (dir / "tree.json").string());
  write_text(dir / "rules.txt", export_rules(res.tree));
  write_json(dir / "train_report.json", report);
  manifest.outputs = {"tree.json", "rules.txt", "train_report.json"};
  manifest.write(dir, cfg);

  out << "epoch  alpha      loss\n";
  const std::size_t E = res.report.epoch_loss.size();
  const std::size_t stride = std::max<std::size_t>(1, E / 10);
  for (std::size_t e = 0; e < E; e += stride) {
    char line[96];
    std::snprintf(line, sizeof line, "%5zu  %-9.4g  %.6g\n", e, res.report.epoch_alpha[e], res.report.epoch_loss[e]);
    out << line;
  }
  out << "train rmse " << res.report.train_rmse << "  validation rmse " << res.report.validation_rmse
      << "  soft rmse " << res.report.soft_train_rmse << "  hardening delta " << res.report.hardening_delta;
  if (report.contains("test_rmse")) out << "  test rmse " << report["test_rmse"].get<double>();
  out << "  (" << res.report.seconds << " s)\n";
  return kExitOk;
}

DisturbanceSpec disturbance_of(const json& ev, std::uint64_t seed) {
  DisturbanceSpec d;
  d.w_bound = ev.at("w_bound").get<double>();
  d.e_bound = ev.at("e_bound").get<double>();
  d.seed = seed;
  const std::string mode = ev.value("mode", std::string("signflip"));
  require(mode == "uniform" || mode == "signflip", "disturbance mode must be 'uniform' or 'signflip'");
  d.mode = mode == "uniform" ? DisturbanceSpec::Mode::Uniform : DisturbanceSpec::Mode::SignFlip;
  d.validate();
  return d;
}

std::string runs_csv(const std::vector<SimResult>& runs) {
  std::ostringstream out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::istringstream table(trajectory_csv(runs[i]));
    std::string line;
    bool header = true;
    while (std::getline(table, line)) {
      if (header) {
        if (i == 0) out << "run," << line << '\n';
        header = false;
        continue;
      }
      out << i << ',' << line << '\n';
    }
  }
  return out.str();
}

int cmd_evaluate(const json& cfg, std::ostream& out) {
  Manifest manifest{"evaluate"};
  const json& ev = cfg.at("evaluation");
  const int steps = ev.at("steps").get<int>();
  require(steps >= 1, "--steps must be >= 1");
  const int starts_n = ev.at("starts").get<int>();
  require(starts_n >= 1, "--starts must be >= 1");
  const int jobs = jobs_of(cfg);
  const std::string tpath = tree_path(cfg);
  const std::string dpath = dataset_path(cfg);
  manifest.input("tree", tpath);
  manifest.input("dataset", dpath);
  const ObliqueTree tree = load_tree(tpath);
  const Dataset data = load_dataset(dpath);
  const MpcProblem problem = problem_of(cfg, manifest, data.problem_id);
  require(tree.n == problem.n() && tree.m == problem.m(), "tree does not match the problem");
  const auto seed = ev.at("seed").get<std::uint64_t>();
  const StateBox box = data.box;

  const RowMatrix starts = uniform_states(box, static_cast<std::size_t>(starts_n), seed);
  const ClosedLoopComparison cmp = compare_closed_loop(
      problem, [&] { return mpc_controller(problem); }, [&] { return tree_controller(tree); }, starts, steps, jobs);

  const RowMatrix test_states = uniform_states(box, ev.at("test_count").get<std::size_t>(), seed + 1);
  ErrorBoundOptions eo;
  eo.samples_per_facet = ev.at("samples_per_facet").get<int>();
  eo.seed = seed + 2;
  eo.jobs = jobs;
  const ErrorBoundReport bound = error_bound_report(tree, problem, data, test_states, eo);

  const RowMatrix timing_states = uniform_states(box, ev.at("timing_states").get<std::size_t>(), seed + 3);
  const int reps = ev.at("timing_repetitions").get<int>();
  const TimingReport timing = benchmark_timing(
      {tree_timing_entry(tree, reps), {"mpc", mpc_controller(problem), std::max(1, reps / 50), {}}}, timing_states, reps);

  const DisturbanceSpec dist = disturbance_of(ev, seed + 4);
  const RowMatrix iss_starts = level_set_states(problem, box, ev.at("iss_starts").get<std::size_t>(),
                                                ev.at("iss_level_fraction").get<double>(), seed + 5);
  const IssResult iss = iss_probe(problem, tree_controller(tree), iss_starts, dist, ev.at("iss_steps").get<int>(), box,
                                  ev.at("iss_radius").get<double>());

  std::vector<SimResult> tree_runs, mpc_runs;
  const Controller tc = tree_controller(tree);
  const Controller mc = mpc_controller(problem);
  for (Eigen::Index i = 0; i < starts.rows(); ++i) {
    tree_runs.push_back(simulate(problem, tc, starts.row(i).transpose(), steps));
    mpc_runs.push_back(simulate(problem, mc, starts.row(i).transpose(), steps));
  }

  const fs::path dir = out_dir(cfg);
  json doc = {{"closed_loop", comparison_to_json(cmp)},
              {"error_bound", error_bound_to_json(bound)},
              {"timing", timing_to_json(timing)},
              {"iss_probe", iss_to_json(iss)},
              {"kernel_isa", std::string(kernels::isa_name(kernels::active().isa))}};
  write_json(dir / "evaluation.json", doc);
  write_text(dir / "trajectories_tree.csv", runs_csv(tree_runs));
  write_text(dir / "trajectories_mpc.csv", runs_csv(mpc_runs));
  manifest.outputs = {"evaluation.json", "trajectories_tree.csv", "trajectories_mpc.csv"};
  manifest.write(dir, cfg);

  char line[256];
  std::snprintf(line, sizeof line, "closed loop: mean lambda mpc %.6g tree %.6g, performance loss %.4f%% (%d runs)\n",
                cmp.mean_lambda_reference, cmp.mean_lambda_candidate, 100.0 * cmp.performance_loss, cmp.runs);
  out << line;
  std::snprintf(line, sizeof line,
                "error bound: %.4g (delta_dt %.3g, j_max %.3g, k_dt %.3g, k_max %.3g), empirical max %.4g%s\n",
                bound.bound, bound.delta_dt, bound.j_max, bound.k_dt, bound.k_max, bound.empirical_max,
                bound.violated ? "  VIOLATED" : "");
  out << line;
  for (const auto& row : timing.rows) {
    std::snprintf(line, sizeof line, "timing %-5s mean %.3e s  p99 %.3e s  worst %.3e s\n", row.name.c_str(), row.mean,
                  row.p99, row.worst);
    out << line;
  }
  std::snprintf(line, sizeof line, "iss probe: %s, max terminal |x|inf %.4g over %d trajectories\n",
                iss.passed ? "pass" : "fail", iss.max_terminal_norm, iss.trajectories);
  out << line;
  return kExitOk;
}

int cmd_simulate(const json& cfg, std::ostream& out) {
  Manifest manifest{"simulate"};
  const MpcProblem problem = problem_of(cfg, manifest);
  const json& sim = cfg.at("simulate");
  const int steps = sim.at("steps").get<int>();
  require(steps >= 1, "--steps must be >= 1");
  const auto x0v = sim.at("x0").get<std::vector<double>>();
  require(static_cast<int>(x0v.size()) == problem.n(), "--x0 needs one value per state");
  const Vector x0 = Eigen::Map<const Vector>(x0v.data(), problem.n());
  const std::string kind = sim.at("controller").get<std::string>();
  Controller ctl;
  if (kind == "mpc") {
    ctl = mpc_controller(problem, !sim.at("cold").get<bool>());
  } else if (kind == "tree") {
    const std::string tpath = tree_path(cfg);
    manifest.input("tree", tpath);
    ctl = tree_controller(load_tree(tpath));
  } else if (kind == "explicit") {
    auto laws = std::make_shared<std::vector<RegionLaw>>(enumerate_explicit(problem));
    ctl = [laws](const Vector& x) { return eval_explicit(*laws, x); };
  } else {
    fail(Errc::InvalidArgument, "--controller must be mpc, tree or explicit");
  }
  const SimResult r = simulate(problem, ctl, x0, steps, disturbance_of(sim, sim.at("seed").get<std::uint64_t>()));
  const fs::path dir = out_dir(cfg);
  write_json(dir / "simulation.json", sim_result_to_json(r));
  write_text(dir / "trajectory.csv", trajectory_csv(r));
  manifest.outputs = {"simulation.json", "trajectory.csv"};
  manifest.write(dir, cfg);
  out << "lambda " << r.lambda << " steps " << r.steps_completed << (r.violated ? " (state bound violated)" : "")
      << '\n';
  if (r.failed) {
    out << "controller failure: " << r.failure << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_export(const json& cfg, std::ostream& out) {
  Manifest manifest{"export"};
  const std::string tpath = tree_path(cfg);
  manifest.input("tree", tpath);
  const ObliqueTree tree = load_tree(tpath);
  const std::string format = cfg.at("export").at("format").get<std::string>();
  require(format == "rules" || format == "json", "--format must be rules or json");
  const std::string text = format == "rules" ? export_rules(tree) : tree_to_json(tree).dump(1) + "\n";
  if (cfg.at("export").at("stdout").get<bool>()) {
    out << text;
    return kExitOk;
  }
  const fs::path dir = out_dir(cfg);
  const std::string name = format == "rules" ? "rules.txt" : "tree_export.json";
  write_text(dir / name, text);
  manifest.outputs = {name};
  manifest.write(dir, cfg);
  out << "wrote " << (dir / name).string() << '\n';
  return kExitOk;
}

int cmd_bench(const json& cfg, std::ostream& out) {
  Manifest manifest{"bench"};
  const MpcProblem problem = problem_of(cfg, manifest);
  const json& ev = cfg.at("evaluation");
  const std::string tpath = tree_path(cfg);
  manifest.input("tree", tpath);
  const ObliqueTree tree = load_tree(tpath);
  require(tree.n == problem.n(), "tree does not match the problem");
  const StateBox box = box_of(cfg, problem.n());
  const RowMatrix states = uniform_states(box, ev.at("timing_states").get<std::size_t>(), ev.at("seed").get<std::uint64_t>());
  const int reps = ev.at("timing_repetitions").get<int>();
  require(reps >= 1, "--repetitions must be >= 1");
  const bool cold = cfg.at("bench").at("cold").get<bool>();
  std::vector<NamedController> ctls{tree_timing_entry(tree, reps),
                                    {cold ? "mpc-cold" : "mpc", mpc_controller(problem, !cold), std::max(1, reps / 50), {}}};
  if (cfg.at("bench").at("explicit").get<bool>()) {
    auto laws = std::make_shared<std::vector<RegionLaw>>(enumerate_explicit(problem, {box}));
    ctls.push_back({"explicit-scan", [laws](const Vector& x) { return eval_explicit(*laws, x); }, reps, {}});
  }
  const TimingReport rep = benchmark_timing(ctls, states, reps);
  const fs::path dir = out_dir(cfg);
  write_json(dir / "timing.json", timing_to_json(rep));
  manifest.outputs = {"timing.json"};
  manifest.write(dir, cfg);
  char line[160];
  for (const auto& row : rep.rows) {
    std::snprintf(line, sizeof line, "%-14s mean %.3e s  p99 %.3e s  worst %.3e s\n", row.name.c_str(), row.mean,
                  row.p99, row.worst);
    out << line;
  }
  return kExitOk;
}

json matrix_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
    rows.push_back(r);
  }
  return rows;
}

int cmd_explicit(const json& cfg, std::ostream& out) {
  Manifest manifest{"explicit"};
  const MpcProblem problem = problem_of(cfg, manifest);
  ExplicitOptions eo;
  const json& ds = cfg.at("dataset");
  if (ds.contains("box") || is_builtin_problem(problem_id(cfg))) eo.domain = box_of(cfg, problem.n());
  eo.merge_equal_laws = !cfg.at("explicit").at("no_merge").get<bool>();
  const auto laws = enumerate_explicit(problem, eo);
  json regions = json::array();
  for (const auto& r : laws) {
    regions.push_back({{"H", matrix_json(r.H)},
                       {"l", std::vector<double>(r.l.data(), r.l.data() + r.l.size())},
                       {"F", matrix_json(r.F)},
                       {"g", std::vector<double>(r.g.data(), r.g.data() + r.g.size())},
                       {"active_sets", r.active_sets},
                       {"chebyshev_radius", r.radius}});
  }
  const fs::path dir = out_dir(cfg);
  write_json(dir / "regions.json", {{"regions", regions}, {"max_gain_norm", max_gain_norm(laws)}});
  manifest.outputs = {"regions.json"};
  if (cfg.at("explicit").at("tree").get<bool>()) {
    save_tree(tree_from_regions(laws), (dir / "tree.json").string());
    manifest.outputs.push_back("tree.json");
  }
  manifest.write(dir, cfg);
  out << "regions " << laws.size() << '\n';
  for (std::size_t i = 0; i < laws.size(); ++i) {
    out << "  region " << i << ": " << laws[i].H.rows() << " facets, u0 = [" << laws[i].F << "] x + [" << laws[i].g.transpose()
        << "], active sets:";
    for (const auto& s : laws[i].active_sets) out << ' ' << s;
    out << '\n';
  }
  return kExitOk;
}

// Registers a flag whose value, when given, overrides `pointer` in the config.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    actions_.push_back([opt, value, pointer](json& cfg) {
      if (opt->count() > 0) cfg[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }
  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& pointer, const std::string& help) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(name, *value, help);
    actions_.push_back([opt, value, pointer](json& cfg) {
      if (opt->count() > 0) cfg[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }
  void apply(json& cfg) const {
    for (const auto& a : actions_) a(cfg);
  }

 private:
  std::vector<std::function<void(json&)>> actions_;
};

void common_flags(CLI::App* sub, Overrides& ov) {
  ov.add<std::string>(sub, "--problem", "/problem", "built-in problem id (case1, case2) or JSON path");
  ov.add<std::string>(sub, "--out", "/out", "output directory");
  ov.add<int>(sub, "--jobs", "/jobs", "worker threads");
}

void dataset_flags(CLI::App* sub, Overrides& ov) {
  ov.add<double>(sub, "--delta", "/dataset/delta", "grid size");
  ov.add<std::vector<double>>(sub, "--box-lo", "/dataset/box/lo", "sampling box lower corner (one value or n)");
  ov.add<std::vector<double>>(sub, "--box-hi", "/dataset/box/hi", "sampling box upper corner (one value or n)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Oblique decision trees that learn linear MPC control laws"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ODTMPC_VERSION);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration; flags override its fields");
  Overrides ov;

  CLI::App* gen = app.add_subcommand("generate", "label grid states with the MPC law and save the dataset");
  common_flags(gen, ov);
  dataset_flags(gen, ov);
  ov.add<std::int64_t>(gen, "--count", "/dataset/count", "subsample the grid to this many states (0 keeps all)");
  ov.add<std::uint64_t>(gen, "--seed", "/dataset/seed", "subsampling seed");
  ov.flag(gen, "--csv", "/dataset/csv", "also write a CSV export");

  CLI::App* tr = app.add_subcommand("train", "train a tree on a dataset");
  common_flags(tr, ov);
  ov.add<std::string>(tr, "--dataset", "/dataset/path", "dataset file (default OUT/dataset.dsbin)");
  ov.add<int>(tr, "--depth", "/train/depth", "tree depth");
  ov.add<int>(tr, "--epochs", "/train/epochs", "training epochs");
  ov.add<double>(tr, "--lr", "/train/learning_rate", "Adam learning rate");
  ov.add<double>(tr, "--alpha-start", "/train/alpha_start", "initial sigmoid sharpness");
  ov.add<double>(tr, "--alpha-growth", "/train/alpha_growth", "sharpness multiplier per epoch");
  ov.add<double>(tr, "--alpha-max", "/train/alpha_max", "maximum sharpness");
  ov.add<int>(tr, "--batch", "/train/batch_size", "mini-batch size");
  ov.add<std::uint64_t>(tr, "--seed", "/train/seed", "training seed");
  ov.add<std::string>(tr, "--init", "/train/init_scheme", "initialisation: lsq or local");
  ov.add<double>(tr, "--validation", "/train/validation_fraction", "validation fraction in [0, 0.5]");
  ov.add<std::int64_t>(tr, "--test-count", "/train/test_count", "uniform test states for the test RMSE (0 skips)");

  CLI::App* evc = app.add_subcommand("evaluate", "closed-loop parity, error bound, timing and ISS probe");
  common_flags(evc, ov);
  ov.add<std::string>(evc, "--tree", "/tree", "tree file (default OUT/tree.json)");
  ov.add<std::string>(evc, "--dataset", "/dataset/path", "training dataset (default OUT/dataset.dsbin)");
  ov.add<int>(evc, "--steps", "/evaluation/steps", "closed-loop steps");
  ov.add<int>(evc, "--starts", "/evaluation/starts", "number of random initial states");
  ov.add<std::int64_t>(evc, "--test-count", "/evaluation/test_count", "test states for the error bound");
  ov.add<std::uint64_t>(evc, "--seed", "/evaluation/seed", "evaluation seed");
  ov.add<double>(evc, "--w-bound", "/evaluation/w_bound", "process noise bound for the ISS probe");
  ov.add<double>(evc, "--e-bound", "/evaluation/e_bound", "estimation error bound for the ISS probe");
  ov.add<int>(evc, "--repetitions", "/evaluation/timing_repetitions", "timed calls per state");

  CLI::App* sim = app.add_subcommand("simulate", "simulate one closed-loop trajectory");
  common_flags(sim, ov);
  ov.add<std::string>(sim, "--controller", "/simulate/controller", "mpc, tree or explicit");
  ov.add<std::string>(sim, "--tree", "/tree", "tree file for --controller tree");
  ov.add<std::vector<double>>(sim, "--x0", "/simulate/x0", "initial state")->required();
  ov.add<int>(sim, "--steps", "/simulate/steps", "steps");
  ov.add<double>(sim, "--w-bound", "/simulate/w_bound", "process noise bound");
  ov.add<double>(sim, "--e-bound", "/simulate/e_bound", "estimation error bound");
  ov.add<std::string>(sim, "--mode", "/simulate/mode", "disturbance mode: uniform or signflip");
  ov.add<std::uint64_t>(sim, "--seed", "/simulate/seed", "disturbance seed");
  ov.flag(sim, "--cold", "/simulate/cold", "cold-start every MPC solve");

  CLI::App* ex = app.add_subcommand("export", "print or write a tree as rules or JSON");
  ov.add<std::string>(ex, "--tree", "/tree", "tree file")->required();
  ov.add<std::string>(ex, "--format", "/export/format", "rules or json");
  ov.add<std::string>(ex, "--out", "/out", "write into this directory instead of stdout");

  CLI::App* bench = app.add_subcommand("bench", "time tree and MPC evaluations");
  common_flags(bench, ov);
  dataset_flags(bench, ov);
  ov.add<std::string>(bench, "--tree", "/tree", "tree file (default OUT/tree.json)");
  ov.add<int>(bench, "--states", "/evaluation/timing_states", "number of random states");
  ov.add<int>(bench, "--repetitions", "/evaluation/timing_repetitions", "timed calls per state");
  ov.add<std::uint64_t>(bench, "--seed", "/evaluation/seed", "state seed");
  ov.flag(bench, "--cold", "/bench/cold", "cold-start every MPC solve");
  ov.flag(bench, "--explicit", "/bench/explicit", "also time a sequential scan of the explicit law");

  CLI::App* expl = app.add_subcommand("explicit", "enumerate the explicit MPC law");
  common_flags(expl, ov);
  dataset_flags(expl, ov);
  ov.flag(expl, "--no-merge", "/explicit/no_merge", "keep one region per active set");
  ov.flag(expl, "--tree", "/explicit/tree", "also compile the regions into tree.json");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << ODTMPC_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, r;
    const int code = app.exit(e, o, r);
    err << r.str() << o.str();
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    json cfg = default_config();
    cfg["simulate"] = {{"controller", "mpc"}, {"steps", 20}, {"w_bound", 0.0}, {"e_bound", 0.0},
                       {"mode", "uniform"},   {"seed", 0},   {"cold", false}};
    cfg["export"] = {{"format", "rules"}, {"stdout", true}};
    cfg["bench"] = {{"cold", false}, {"explicit", false}};
    cfg["explicit"] = {{"no_merge", false}, {"tree", false}};
    if (!config_path.empty()) cfg.merge_patch(read_json(config_path));
    try {
      ov.apply(cfg);
    } catch (const json::exception& e) {
      fail(Errc::InvalidArgument, e.what());
    }
    if (ex->parsed() && ex->get_option("--out")->count() > 0) cfg["export"]["stdout"] = false;
    fill_problem_defaults(cfg);
    try {
      if (gen->parsed()) return cmd_generate(cfg, out);
      if (tr->parsed()) return cmd_train(cfg, out);
      if (evc->parsed()) return cmd_evaluate(cfg, out);
      if (sim->parsed()) return cmd_simulate(cfg, out);
      if (ex->parsed()) return cmd_export(cfg, out);
      if (bench->parsed()) return cmd_bench(cfg, out);
      if (expl->parsed()) return cmd_explicit(cfg, out);
    } catch (const json::exception& e) {
      fail(Errc::InvalidArgument, std::string("configuration: ") + e.what());
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::Validation:
        return kExitValidation;
      case ErrorKind::Numerical:
        return kExitNumerical;
      case ErrorKind::Io:
        return kExitIo;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitValidation;
}

}  // namespace odtmpc::cli
