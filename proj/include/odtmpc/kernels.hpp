#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace odtmpc::kernels {

/// Instruction-set variants of the tree kernels. Every variant evaluates the
/// same sums in the same order without contraction, so results agree
/// bit-for-bit with the scalar reference.
enum class Isa { Scalar, Avx2 };

/// out[r*K + k] = bias[k] + sum_j Wt[j*K + k] * X[r*n + j], j ascending.
/// Wt is feature-major (n x K); bias may be null.
using AffineColumnsFn = void (*)(const double* X, std::size_t rows, int n, const double* Wt, const double* bias,
                                 int K, double* out);

/// Gt[j*K + k] += sum_r S[r*K + k] * X[r*n + j], r ascending.
using AccumulateOuterFn = void (*)(const double* S, std::size_t rows, int K, const double* X, int n, double* Gt);

/// Hard routing of every row through a complete tree of the given depth.
/// a is branch-major (branches x n), heap order. Writes the leaf position
/// (0 .. 2^depth - 1) of each row. Left iff a_t'x <= b_t.
using RouteBatchFn = void (*)(const double* X, std::size_t rows, int n, const double* a, const double* b, int depth,
                              std::int32_t* leaf_out);

struct KernelTable {
  Isa isa;
  AffineColumnsFn affine_columns;
  AccumulateOuterFn accumulate_outer;
  RouteBatchFn route_batch;
};

bool available(Isa isa);
std::string_view isa_name(Isa isa);

/// Table for a specific variant; throws InvalidArgument when unavailable.
const KernelTable& table(Isa isa);

/// The variant in use. Defaults to the widest one the CPU supports; the
/// ODTMPC_ISA environment variable ("scalar", "avx2") overrides it.
const KernelTable& active();
void select(Isa isa);

}  // namespace odtmpc::kernels
