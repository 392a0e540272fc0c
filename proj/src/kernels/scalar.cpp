#include "internal.hpp"

namespace odtmpc::kernels::detail {
namespace {

void affine_columns(const double* X, std::size_t rows, int n, const double* Wt, const double* bias, int K,
                    double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = X + r * static_cast<std::size_t>(n);
    double* o = out + r * static_cast<std::size_t>(K);
    for (int k = 0; k < K; ++k) {
      double acc = bias ? bias[k] : 0.0;
      for (int j = 0; j < n; ++j) acc = acc + Wt[j * K + k] * x[j];
      o[k] = acc;
    }
  }
}

void accumulate_outer(const double* S, std::size_t rows, int K, const double* X, int n, double* Gt) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = S + r * static_cast<std::size_t>(K);
    const double* x = X + r * static_cast<std::size_t>(n);
    for (int j = 0; j < n; ++j) {
      double* g = Gt + static_cast<std::size_t>(j) * K;
      for (int k = 0; k < K; ++k) g[k] = g[k] + s[k] * x[j];
    }
  }
}

void route_batch(const double* X, std::size_t rows, int n, const double* a, const double* b, int depth,
                 std::int32_t* leaf_out) {
  const std::int32_t first_leaf = std::int32_t{1} << depth;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = X + r * static_cast<std::size_t>(n);
    std::int32_t t = 1;
    for (int level = 0; level < depth; ++level) {
      const double* at = a + static_cast<std::size_t>(t - 1) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot = dot + at[j] * x[j];
      t = 2 * t + (dot <= b[t - 1] ? 0 : 1);
    }
    leaf_out[r] = t - first_leaf;
  }
}

}  // namespace

const KernelTable kScalarTable{Isa::Scalar, affine_columns, accumulate_outer, route_batch};

}  // namespace odtmpc::kernels::detail
