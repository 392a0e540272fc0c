#include "oracles.hpp"

#include "odtmpc/dataset.hpp"
#include "odtmpc/qp.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

using namespace odtmpc;

namespace {

std::vector<double> column(const RowMatrix& X) { return std::vector<double>(X.data(), X.data() + X.size()); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("grid on a unit interval") {
  const RowMatrix X = grid_states(StateBox::uniform(1, -1.0, 1.0), 1.0);
  CHECK(column(X) == std::vector<double>{-1.0, 0.0, 1.0});
}

TEST_CASE("grid on a square has nine points in row-major order") {
  const RowMatrix X = grid_states(StateBox::uniform(2, -1.0, 1.0), 1.0);
  REQUIRE(X.rows() == 9);
  CHECK(X(0, 0) == -1.0);
  CHECK(X(0, 1) == -1.0);
  CHECK(X(1, 0) == -1.0);
  CHECK(X(1, 1) == 0.0);
  CHECK(X(8, 0) == 1.0);
  CHECK(X(8, 1) == 1.0);
}

TEST_CASE("grid drops an upper bound that is not hit") {
  const RowMatrix X = grid_states(StateBox::uniform(1, 0.0, 1.0), 0.4);
  REQUIRE(X.rows() == 3);
  CHECK(X(0, 0) == 0.0);
  CHECK(X(1, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(X(2, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("grid of the first case box") {
  const Grid g(StateBox::uniform(2, -1.5, 1.5), 0.01);
  CHECK(g.size() == 301u * 301u);
  CHECK(g.point(g.size() - 1)[0] == doctest::Approx(1.5));
}

TEST_CASE("grid guards") {
  const StateBox box = StateBox::uniform(4, -1.0, 1.0);
  CHECK(oracle::thrown_code([&] { grid_states(box, 0.01); }) == Errc::TooManyPoints);
  CHECK(oracle::thrown_code([&] { grid_states(box, -1.0); }) == Errc::InvalidArgument);
  CHECK(oracle::thrown_code([&] { grid_states(box, 0.0); }) == Errc::InvalidArgument);
  StateBox bad = box;
  bad.hi[0] = bad.lo[0];
  CHECK(oracle::thrown_code([&] { grid_states(bad, 0.5); }) == Errc::InvalidArgument);
}

TEST_CASE("subsample identity and determinism") {
  const RowMatrix X = grid_states(StateBox::uniform(1, 0.0, 9.0), 1.0);
  REQUIRE(X.rows() == 10);
  CHECK(subsample(X, 10, 3) == X);
  const RowMatrix a = subsample(X, 3, 42);
  const RowMatrix b = subsample(X, 3, 42);
  CHECK(a.rows() == 3);
  CHECK(a == b);
  CHECK(oracle::thrown_code([&] { subsample(X, 11, 1); }) == Errc::InvalidArgument);
}

TEST_CASE("subsample of a large grid is unique") {
  const RowMatrix X = grid_states(StateBox::uniform(2, 0.0, 499.0), 1.0);
  REQUIRE(X.rows() == 250000);
  const RowMatrix S = subsample(X, 100000, 7);
  REQUIRE(S.rows() == 100000);
  std::vector<std::pair<double, double>> rows;
  for (Eigen::Index i = 0; i < S.rows(); ++i) rows.emplace_back(S(i, 0), S(i, 1));
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
}

TEST_CASE("subsample of a grid matches subsampling the materialised grid") {
  const StateBox box = StateBox::uniform(3, -1.0, 1.0);
  const RowMatrix full = grid_states(box, 0.1);
  CHECK(subsample_grid(box, 0.1, 500, 9) == subsample(full, 500, 9));
}

TEST_CASE("sample indices are sorted and distinct") {
  const auto idx = sample_indices(1000000, 5000, 12);
  CHECK(idx.size() == 5000);
  CHECK(std::is_sorted(idx.begin(), idx.end()));
  CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  CHECK(idx.back() < 1000000u);
}

TEST_CASE("generate at the origin") {
  const RowMatrix X = RowMatrix::Zero(1, 2);
  const Dataset d = generate_dataset(case1_problem(), X, 1, 0.0, StateBox::uniform(2, -1.5, 1.5), "case1");
  REQUIRE(d.rows() == 1);
  CHECK(d.U(0, 0) == 0.0);
}

TEST_CASE("generate labels the first case grid") {
  const StateBox box = StateBox::uniform(2, -1.5, 1.5);
  const MpcProblem p = case1_problem();
  GenerateReport rep;
  const Dataset d = generate_dataset(p, grid_states(box, 0.01), 2, 0.01, box, "case1", &rep);
  CHECK(d.rows() == 90601);
  CHECK(rep.dropped == 0);
  CHECK(d.U.cwiseAbs().maxCoeff() <= 2.0 + 1e-8);
  Rng rng(1);
  for (int k = 0; k < 1000; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d.rows())));
    const Vector x = d.X.row(i).transpose();
    CHECK(box.contains(x));
    CHECK(std::abs(mpc_control(p, x)[0] - d.U(i, 0)) <= 1e-8);
  }
}

TEST_CASE("generate is identical for any parallelism") {
  const StateBox box = StateBox::uniform(4, -1.0, 1.0);
  const RowMatrix X = subsample_grid(box, 0.05, 3000, 5);
  const MpcProblem p = case2_problem();
  const Dataset a = generate_dataset(p, X, 1, 0.05, box, "case2");
  const Dataset b = generate_dataset(p, X, 8, 0.05, box, "case2");
  CHECK(a == b);
  CHECK(dataset_checksum(a) == dataset_checksum(b));
}

TEST_CASE("generate drops infeasible states and keeps order") {
  MpcProblem p = case1_problem();
  p.x_min = Vector::Constant(2, -1.0);
  p.x_max = Vector::Constant(2, 1.0);
  RowMatrix X(3, 2);
  X << 0.1, 0.1, 1.45, 1.45, -0.2, 0.3;
  GenerateReport rep;
  const Dataset d = generate_dataset(p, X, 1, 0.0, StateBox::uniform(2, -1.5, 1.5), "custom", &rep);
  CHECK(rep.dropped == 1);
  REQUIRE(d.rows() == 2);
  CHECK(d.X(0, 0) == 0.1);
  CHECK(d.X(1, 0) == -0.2);
  RowMatrix bad(1, 2);
  bad << 1.45, 1.45;
  CHECK(oracle::thrown_code([&] { generate_dataset(p, bad, 1, 0.0, StateBox::uniform(2, -1.5, 1.5), "c"); }) ==
        Errc::AllInfeasible);
}

TEST_CASE("coverage of the grid") {
  const StateBox box = StateBox::uniform(3, -1.0, 1.0);
  const double delta = 0.25;
  const RowMatrix X = grid_states(box, delta);
  Rng rng(2);
  double worst = 0.0;
  for (int k = 0; k < 500; ++k) {
    Vector x(3);
    for (int j = 0; j < 3; ++j) x[j] = rng.uniform(-1.0, 1.0);
    double best = kInf;
    for (Eigen::Index i = 0; i < X.rows(); ++i) best = std::min(best, (X.row(i).transpose() - x).norm());
    worst = std::max(worst, best);
  }
  CHECK(worst <= std::sqrt(3.0) * delta / 2.0);
}

TEST_CASE("binary roundtrip is bit exact") {
  const auto dir = oracle::scratch_dir("dataset_roundtrip");
  const StateBox box = StateBox::uniform(2, -1.5, 1.5);
  const Dataset d = generate_dataset(case1_problem(), grid_states(box, 0.01), 1, 0.01, box, "case1");
  save_dataset(d, (dir / "d.dsbin").string());
  const Dataset e = load_dataset((dir / "d.dsbin").string());
  CHECK(e == d);
  CHECK(dataset_checksum(e) == dataset_checksum(d));
  CHECK(e.delta_x == d.delta_x);
  CHECK(e.problem_id == "case1");

  RowMatrix one(1, 2);
  one << 0.25, -0.5;
  const Dataset s = generate_dataset(case1_problem(), one, 1, 0.0, box, "case1");
  save_dataset(s, (dir / "s.dsbin").string());
  CHECK(load_dataset((dir / "s.dsbin").string()) == s);
}

TEST_CASE("corrupted binary is a schema mismatch") {
  const auto dir = oracle::scratch_dir("dataset_corrupt");
  const StateBox box = StateBox::uniform(2, -1.5, 1.5);
  const Dataset d = generate_dataset(case1_problem(), grid_states(box, 0.5), 1, 0.5, box, "case1");
  const auto path = dir / "d.dsbin";
  save_dataset(d, path.string());
  std::string bytes = slurp(path);
  bytes[bytes.size() - 3] ^= 0x5a;
  std::ofstream(path, std::ios::binary) << bytes;
  CHECK(oracle::thrown_code([&] { load_dataset(path.string()); }) == Errc::SchemaMismatch);
  std::ofstream(dir / "junk.dsbin", std::ios::binary) << "not a dataset";
  CHECK(oracle::thrown_code([&] { load_dataset((dir / "junk.dsbin").string()); }) == Errc::SchemaMismatch);
  CHECK(oracle::thrown_code([&] { load_dataset((dir / "missing.dsbin").string()); }) == Errc::Io);
}

TEST_CASE("csv export column order") {
  const auto dir = oracle::scratch_dir("dataset_csv");
  const StateBox box = StateBox::uniform(2, -1.5, 1.5);
  RowMatrix X(3, 2);
  X << 0.0, 0.0, 0.5, -0.5, 1.0, 1.0;
  const Dataset d = generate_dataset(case1_problem(), X, 1, 0.0, box, "case1");
  export_csv(d, (dir / "d.csv").string());
  std::istringstream in(slurp(dir / "d.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  }
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "x1,x2,u1");
  CHECK(lines[2].rfind("0.5,-0.5,", 0) == 0);
}

}  // TEST_SUITE
