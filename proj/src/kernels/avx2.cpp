#include "internal.hpp"

#include <immintrin.h>

namespace odtmpc::kernels::detail {
namespace {

// Multiplies and adds are kept separate (no FMA) so every lane rounds exactly
// like the scalar loop.

void affine_columns(const double* X, std::size_t rows, int n, const double* Wt, const double* bias, int K,
                    double* out) {
  const int K4 = K & ~3;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = X + r * static_cast<std::size_t>(n);
    double* o = out + r * static_cast<std::size_t>(K);
    int k = 0;
    for (; k < K4; k += 4) {
      __m256d acc = bias ? _mm256_loadu_pd(bias + k) : _mm256_setzero_pd();
      for (int j = 0; j < n; ++j) {
        const __m256d w = _mm256_loadu_pd(Wt + j * K + k);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(w, _mm256_set1_pd(x[j])));
      }
      _mm256_storeu_pd(o + k, acc);
    }
    for (; k < K; ++k) {
      double acc = bias ? bias[k] : 0.0;
      for (int j = 0; j < n; ++j) acc = acc + Wt[j * K + k] * x[j];
      o[k] = acc;
    }
  }
}

void accumulate_outer(const double* S, std::size_t rows, int K, const double* X, int n, double* Gt) {
  const int K4 = K & ~3;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* s = S + r * static_cast<std::size_t>(K);
    const double* x = X + r * static_cast<std::size_t>(n);
    for (int j = 0; j < n; ++j) {
      double* g = Gt + static_cast<std::size_t>(j) * K;
      const __m256d xj = _mm256_set1_pd(x[j]);
      int k = 0;
      for (; k < K4; k += 4) {
        const __m256d prod = _mm256_mul_pd(_mm256_loadu_pd(s + k), xj);
        _mm256_storeu_pd(g + k, _mm256_add_pd(_mm256_loadu_pd(g + k), prod));
      }
      for (; k < K; ++k) g[k] = g[k] + s[k] * x[j];
    }
  }
}

void route_batch(const double* X, std::size_t rows, int n, const double* a, const double* b, int depth,
                 std::int32_t* leaf_out) {
  const std::int32_t first_leaf = std::int32_t{1} << depth;
  const long long ln = n;
  const __m256i one = _mm256_set1_epi64x(1);
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    const __m256i row_base =
        _mm256_set_epi64x(static_cast<long long>(r + 3) * ln, static_cast<long long>(r + 2) * ln,
                          static_cast<long long>(r + 1) * ln, static_cast<long long>(r) * ln);
    __m256i t = one;
    for (int level = 0; level < depth; ++level) {
      const __m256i node = _mm256_sub_epi64(t, one);
      const __m256i a_base = _mm256_mul_epi32(node, _mm256_set1_epi64x(ln));
      __m256d dot = _mm256_setzero_pd();
      for (int j = 0; j < n; ++j) {
        const __m256i jj = _mm256_set1_epi64x(j);
        const __m256d aj = _mm256_i64gather_pd(a, _mm256_add_epi64(a_base, jj), 8);
        const __m256d xj = _mm256_i64gather_pd(X, _mm256_add_epi64(row_base, jj), 8);
        dot = _mm256_add_pd(dot, _mm256_mul_pd(aj, xj));
      }
      const __m256d bt = _mm256_i64gather_pd(b, node, 8);
      // Right child unless dot <= b, so NaN goes right as in the scalar loop.
      const __m256i right = _mm256_castpd_si256(_mm256_cmp_pd(dot, bt, _CMP_NLE_UQ));
      t = _mm256_sub_epi64(_mm256_add_epi64(t, t), right);
    }
    alignas(32) long long out[4];
    _mm256_store_si256(reinterpret_cast<__m256i*>(out), t);
    for (int i = 0; i < 4; ++i) leaf_out[r + i] = static_cast<std::int32_t>(out[i]) - first_leaf;
  }
  if (r < rows) kScalarTable.route_batch(X + r * static_cast<std::size_t>(n), rows - r, n, a, b, depth, leaf_out + r);
}

}  // namespace

const KernelTable kAvx2Table{Isa::Avx2, affine_columns, accumulate_outer, route_batch};

}  // namespace odtmpc::kernels::detail
