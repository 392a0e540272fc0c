#include "odtmpc/errors.hpp"
#include "odtmpc/lp.hpp"
#include "odtmpc/tree.hpp"

#include <algorithm>
#include <memory>

namespace odtmpc {

namespace {

constexpr double kMinRadius = 1e-9;

struct Cell {
  Matrix A;  // accumulated split constraints A x <= b
  Vector b;
};

struct Node {
  int region = -1;  // leaf when >= 0
  Vector a;
  double b = 0.0;
  std::unique_ptr<Node> left, right;
  int height() const { return region >= 0 ? 0 : 1 + std::max(left->height(), right->height()); }
};

Cell with_row(const Cell& cell, const Vector& a, double b) {
  Cell out;
  out.A.resize(cell.A.rows() + 1, a.size());
  out.b.resize(cell.b.size() + 1);
  if (cell.A.rows() > 0) {
    out.A.topRows(cell.A.rows()) = cell.A;
    out.b.head(cell.b.size()) = cell.b;
  }
  out.A.row(cell.A.rows()) = a.transpose();
  out.b[cell.b.size()] = b;
  return out;
}

// Whether region ∩ cell has nonempty interior.
bool meets(const RegionLaw& region, const Cell& cell) {
  Matrix A(region.H.rows() + cell.A.rows(), region.H.cols());
  Vector b(A.rows());
  A << region.H, cell.A;
  b << region.l, cell.b;
  const ChebyshevBall ball = chebyshev_ball(A, b);
  return ball.feasible && ball.radius > kMinRadius;
}

std::unique_ptr<Node> build(const std::vector<RegionLaw>& laws, const std::vector<int>& members, const Cell& cell) {
  auto node = std::make_unique<Node>();
  if (members.size() == 1) {
    node->region = members.front();
    return node;
  }
  std::size_t best_score = members.size();
  std::vector<int> best_left, best_right;
  Vector best_a;
  double best_b = 0.0;
  for (int owner : members) {
    const RegionLaw& r = laws[static_cast<std::size_t>(owner)];
    for (Eigen::Index row = 0; row < r.H.rows(); ++row) {
      const Vector a = r.H.row(row).transpose();
      const double b = r.l[row];
      const Cell lcell = with_row(cell, a, b);
      const Cell rcell = with_row(cell, -a, -b);
      std::vector<int> left, right;
      for (int i : members) {
        if (meets(laws[static_cast<std::size_t>(i)], lcell)) left.push_back(i);
        if (meets(laws[static_cast<std::size_t>(i)], rcell)) right.push_back(i);
      }
      if (left.empty() || right.empty()) continue;  // face of the domain within this cell
      const std::size_t score = std::max(left.size(), right.size());
      if (score < best_score) {
        best_score = score;
        best_left = std::move(left);
        best_right = std::move(right);
        best_a = a;
        best_b = b;
      }
    }
  }
  if (best_score >= members.size()) {
    fail(Errc::NotSeparable, "no stored hyperplane separates a set of " + std::to_string(members.size()) + " regions");
  }
  node->a = best_a;
  node->b = best_b;
  node->left = build(laws, best_left, with_row(cell, best_a, best_b));
  node->right = build(laws, best_right, with_row(cell, -best_a, -best_b));
  return node;
}

void place(const Node& node, const std::vector<RegionLaw>& laws, ObliqueTree& tree, int t, const Node* leaf_source) {
  const int first = 1 << tree.depth;
  const Node& src = leaf_source ? *leaf_source : node;
  if (t >= first) {
    const RegionLaw& r = laws[static_cast<std::size_t>(src.region)];
    tree.set_leaf(t - first, r.F, r.g);
    return;
  }
  if (src.region >= 0) {
    // Padding: a = 0, b = 0 sends everything left; both children get the law.
    tree.set_split(t, Vector::Zero(tree.n), 0.0);
    place(node, laws, tree, 2 * t, &src);
    place(node, laws, tree, 2 * t + 1, &src);
    return;
  }
  tree.set_split(t, src.a, src.b);
  place(*src.left, laws, tree, 2 * t, nullptr);
  place(*src.right, laws, tree, 2 * t + 1, nullptr);
}

}  // namespace

ObliqueTree tree_from_regions(const std::vector<RegionLaw>& laws) {
  require(!laws.empty(), "tree_from_regions: no regions");
  const auto n = laws.front().H.cols();
  const auto m = laws.front().F.rows();
  for (const auto& r : laws) {
    require(r.H.cols() == n && r.F.cols() == n && r.F.rows() == m && r.g.size() == m && r.l.size() == r.H.rows(),
            "tree_from_regions: inconsistent region shapes");
  }
  std::vector<int> all(laws.size());
  for (std::size_t i = 0; i < laws.size(); ++i) all[i] = static_cast<int>(i);
  Cell root;
  root.A.resize(0, n);
  root.b.resize(0);
  const auto top = build(laws, all, root);
  ObliqueTree tree(top->height(), static_cast<int>(n), static_cast<int>(m));
  place(*top, laws, tree, 1, nullptr);
  return tree;
}

}  // namespace odtmpc
