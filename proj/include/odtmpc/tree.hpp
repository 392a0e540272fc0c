#pragma once

#include "odtmpc/explicit_law.hpp"
#include "odtmpc/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace odtmpc {

/// Complete oblique decision tree with affine leaves.
///
/// Nodes use heap numbering: node 1 is the root, node t has children 2t and
/// 2t+1, branches are 1 .. 2^D - 1 and leaves 2^D .. 2^(D+1) - 1. Branch
/// arrays are indexed by t - 1, leaf arrays by the leaf position t - 2^D.
/// A sample goes left at branch t iff a_t'x <= b_t; leaf t outputs c_t'x + d_t.
struct ObliqueTree {
  int depth = 0;
  int n = 0;
  int m = 0;
  std::vector<double> split_a;  ///< branches x n, row-major
  std::vector<double> split_b;  ///< branches
  std::vector<double> leaf_c;   ///< leaves x m x n: row k of leaf t is the gain of output k (column k of c_t)
  std::vector<double> leaf_d;   ///< leaves x m

  ObliqueTree() = default;
  /// All-zero parameters; every sample goes left.
  ObliqueTree(int depth, int n, int m);

  int num_branches() const { return (1 << depth) - 1; }
  int num_leaves() const { return 1 << depth; }
  int num_nodes() const { return (2 << depth) - 1; }

  const double* a(int branch_node) const { return split_a.data() + static_cast<std::size_t>(branch_node - 1) * n; }
  double* a(int branch_node) { return split_a.data() + static_cast<std::size_t>(branch_node - 1) * n; }
  double& b(int branch_node) { return split_b[static_cast<std::size_t>(branch_node - 1)]; }
  double b(int branch_node) const { return split_b[static_cast<std::size_t>(branch_node - 1)]; }

  /// m x n gain matrix of the leaf at position `leaf` (c_t transposed).
  Matrix leaf_gain(int leaf) const;
  Vector leaf_offset(int leaf) const;
  void set_leaf(int leaf, const Matrix& gain, const Vector& offset);
  void set_split(int branch_node, const Vector& a, double b);

  Vector leaf_output(int leaf, const Vector& x) const;

  /// Throws InvalidArgument on wrong array sizes or non-finite values.
  void validate() const;

  bool operator==(const ObliqueTree& other) const;
};

struct LeafPath {
  int leaf_node = 1;  ///< heap id of the reached leaf
  std::vector<std::pair<int, bool>> path;  ///< (branch node, went_left)
  int leaf_position(int depth) const { return leaf_node - (1 << depth); }
};

/// Hard routing; exactly `depth` comparisons.
LeafPath leaf_index(const ObliqueTree& tree, const Vector& x);
int route(const ObliqueTree& tree, const double* x);
Vector predict(const ObliqueTree& tree, const Vector& x);
/// Allocation-free prediction; `u` receives m values.
void predict_into(const ObliqueTree& tree, const double* x, double* u);

/// Row-wise predictions using the active kernel variant.
RowMatrix predict_batch(const ObliqueTree& tree, const RowMatrix& X);
std::vector<std::int32_t> route_batch(const ObliqueTree& tree, const RowMatrix& X);

/// K_DT: the largest leaf-gain spectral norm (power iteration).
double lipschitz_max(const ObliqueTree& tree);
double spectral_norm(const Matrix& M, int max_iterations = 1000, double rel_tol = 1e-10);

struct JumpEstimate {
  double value = 0.0;
  bool exact = false;
  int facets_sampled = 0;      ///< branches whose facet meets the reachable set
  int degenerate_splits = 0;   ///< branches with a_t = 0, skipped
};

/// Monte-Carlo lower estimate of the largest discontinuity between leaf laws
/// across split facets inside the box. Points are drawn uniformly (hit and
/// run) on the part of each facet that is actually routed to that branch.
JumpEstimate estimate_max_jump(const ObliqueTree& tree, const StateBox& box, int samples_per_facet,
                               std::uint64_t seed);

/// Exact supremum by LP over every facet and leaf pair. Depth <= 4, m = 1.
JumpEstimate exact_max_jump(const ObliqueTree& tree, const StateBox& box);

/// Indented if/else listing. Default names are x1..xn and u1..um.
std::string export_rules(const ObliqueTree& tree, const std::vector<std::string>& state_names = {},
                         const std::vector<std::string>& input_names = {});

nlohmann::json tree_to_json(const ObliqueTree& tree);
/// Throws SchemaMismatch on malformed documents.
ObliqueTree tree_from_json(const nlohmann::json& doc);
void save_tree(const ObliqueTree& tree, const std::string& path);
ObliqueTree load_tree(const std::string& path);

/// Builds a tree whose hard routing reproduces the piecewise-affine law
/// exactly: each split is a stored facet of some region, chosen so that both
/// sides keep fewer regions. Shallow branches are padded with a = 0, b = 0
/// (always left) and duplicated leaf laws. Throws NotSeparable.
ObliqueTree tree_from_regions(const std::vector<RegionLaw>& laws);

}  // namespace odtmpc
