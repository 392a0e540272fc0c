#pragma once

#include "odtmpc/tree.hpp"
#include "odtmpc/types.hpp"

#include <vector>

namespace odtmpc {

/// Tree parameters with sigmoid routing. Branch t sends a sample left with
/// weight S(b_t - a_t'x), S(z) = 1 / (1 + exp(-alpha z)); a leaf's weight is
/// the product of the branch weights along its path.
struct SoftTreeParams {
  ObliqueTree tree;
  double alpha = 1.0;

  void validate() const;
};

/// Same layout as the ObliqueTree arrays.
struct SoftGradient {
  std::vector<double> a, b, c, d;

  void resize_like(const ObliqueTree& tree);
  void zero();
  void add(const SoftGradient& other);
};

/// Leaf weights w_t(x), a probability vector over leaf positions.
Vector soft_leaf_weights(const SoftTreeParams& params, const Vector& x);

/// sum_t w_t(x) (c_t'x + d_t).
Vector soft_forward(const SoftTreeParams& params, const Vector& x);

/// sum_i sum_t w_t(x_i) ||u_i - (c_t'x_i + d_t)||^2.
double soft_loss(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U);

/// Analytic gradient of soft_loss.
SoftGradient soft_grad(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U);

/// Batched evaluator with reusable buffers. Call prepare() after every
/// parameter change, then any number of evaluate() calls. Not thread-safe.
class SoftEvaluator {
 public:
  void prepare(const SoftTreeParams& params);

  /// Loss over `rows` samples starting at the given row pointers; adds the
  /// gradient into `grad` when it is non-null.
  double evaluate(const double* X, const double* U, std::size_t rows, SoftGradient* grad);

  /// Blended predictions sum_t w_t (c_t'x + d_t), row-major rows x m.
  void forward(const double* X, std::size_t rows, double* out);

 private:
  void routing(const double* X, std::size_t rows);

  const SoftTreeParams* params_ = nullptr;
  int n_ = 0, m_ = 0, depth_ = 0, branches_ = 0, leaves_ = 0;
  std::vector<double> at_, ct_;        // feature-major copies of a and c
  std::vector<double> margin_, yhat_;  // rows x branches, rows x leaves*m
  std::vector<double> sig_, logw_;     // rows x branches, rows x nodes
  std::vector<double> sa_, sc_;        // per-row gradient coefficients
  std::vector<double> gat_, gct_;      // feature-major gradient accumulators
  std::vector<double> subtree_;
};

}  // namespace odtmpc
