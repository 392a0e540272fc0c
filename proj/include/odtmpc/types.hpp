#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>

namespace odtmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-per-sample storage for state and action sets.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Axis-aligned box of states; the sampling set for datasets and the domain
/// for explicit-law enumeration.
struct StateBox {
  Vector lo;
  Vector hi;

  int dim() const { return static_cast<int>(lo.size()); }
  void validate() const;
  bool contains(const Vector& x, double tol = 0.0) const;
  static StateBox uniform(int n, double lo, double hi);
};

/// 64-bit FNV-1a, used for dataset payload checksums and manifest hashes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace odtmpc
