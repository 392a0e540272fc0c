#pragma once

#include "odtmpc/problem.hpp"
#include "odtmpc/types.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace odtmpc {

/// Grid-sampled state/action pairs (x_i, u_i = kappa_N(x_i)).
struct Dataset {
  RowMatrix X;  ///< S x n
  RowMatrix U;  ///< S x m
  double delta_x = 0.0;
  StateBox box;
  std::string problem_id;

  Eigen::Index rows() const { return X.rows(); }
  int n() const { return static_cast<int>(X.cols()); }
  int m() const { return static_cast<int>(U.cols()); }

  bool operator==(const Dataset& other) const;
};

/// Sampling box defaults: case1 [-1.5, 1.5]^2, case2 [-1, 1]^4.
StateBox default_box(std::string_view problem_id);

/// Uniform lattice lo_j, lo_j + delta, ... <= hi_j on every axis.
class Grid {
 public:
  Grid(StateBox box, double delta);

  std::uint64_t size() const { return size_; }
  const std::vector<std::uint64_t>& axis_counts() const { return counts_; }
  /// Row-major decoding: the last axis varies fastest.
  Vector point(std::uint64_t index) const;
  const StateBox& box() const { return box_; }
  double delta() const { return delta_; }

 private:
  StateBox box_;
  double delta_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t size_ = 1;
};

/// All grid points, row-major. Throws TooManyPoints above `cap`.
RowMatrix grid_states(const StateBox& box, double delta, std::uint64_t cap = 10'000'000);

/// `count` distinct indices from [0, population), ascending.
std::vector<std::uint64_t> sample_indices(std::uint64_t population, std::uint64_t count, std::uint64_t seed);

/// Uniform subset without replacement; preserves the input order.
RowMatrix subsample(const RowMatrix& points, std::size_t target, std::uint64_t seed);

/// Grid followed by subsampling, without materializing the full grid.
RowMatrix subsample_grid(const StateBox& box, double delta, std::size_t target, std::uint64_t seed);

/// Independent uniform draws inside the box (test sets).
RowMatrix uniform_states(const StateBox& box, std::size_t count, std::uint64_t seed);

struct GenerateReport {
  std::size_t retained = 0;
  std::size_t dropped = 0;
  double seconds = 0.0;
};

/// Labels every state with mpc_control; infeasible states are dropped and
/// counted. Output order follows the input order for any `parallelism`.
/// Throws AllInfeasible when nothing survives, MaxIterations on solver failure.
Dataset generate_dataset(const MpcProblem& problem, const RowMatrix& states, int parallelism,
                         double delta_x, const StateBox& box, std::string problem_id,
                         GenerateReport* report = nullptr);

/// `.dsbin`: 8-byte magic, little-endian u64 header length, JSON header,
/// then X and U as little-endian IEEE-754 doubles, row-major.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Columns x1..xn,u1..um after a '#' provenance line. Decimal text with 12
/// significant digits: a lossy export, the binary file is canonical.
void export_csv(const Dataset& data, const std::string& path);

std::uint64_t dataset_checksum(const Dataset& data);

}  // namespace odtmpc
