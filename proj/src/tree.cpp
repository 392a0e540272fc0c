#include "odtmpc/tree.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/kernels.hpp"
#include "odtmpc/lp.hpp"
#include "odtmpc/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace odtmpc {

using nlohmann::json;

ObliqueTree::ObliqueTree(int depth_, int n_, int m_) : depth(depth_), n(n_), m(m_) {
  require(depth_ >= 0 && depth_ <= 20, "tree depth must be in [0, 20]");
  require(n_ >= 1 && m_ >= 1, "tree needs n >= 1 and m >= 1");
  split_a.assign(static_cast<std::size_t>(num_branches()) * n, 0.0);
  split_b.assign(static_cast<std::size_t>(num_branches()), 0.0);
  leaf_c.assign(static_cast<std::size_t>(num_leaves()) * m * n, 0.0);
  leaf_d.assign(static_cast<std::size_t>(num_leaves()) * m, 0.0);
}

Matrix ObliqueTree::leaf_gain(int leaf) const {
  Matrix G(m, n);
  const double* c = leaf_c.data() + static_cast<std::size_t>(leaf) * m * n;
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < n; ++j) G(k, j) = c[k * n + j];
  }
  return G;
}

Vector ObliqueTree::leaf_offset(int leaf) const {
  return Eigen::Map<const Vector>(leaf_d.data() + static_cast<std::size_t>(leaf) * m, m);
}

void ObliqueTree::set_leaf(int leaf, const Matrix& gain, const Vector& offset) {
  require(leaf >= 0 && leaf < num_leaves(), "leaf position out of range");
  require(gain.rows() == m && gain.cols() == n && offset.size() == m, "leaf law has wrong shape");
  double* c = leaf_c.data() + static_cast<std::size_t>(leaf) * m * n;
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < n; ++j) c[k * n + j] = gain(k, j);
    leaf_d[static_cast<std::size_t>(leaf) * m + k] = offset[k];
  }
}

void ObliqueTree::set_split(int branch_node, const Vector& a_t, double b_t) {
  require(branch_node >= 1 && branch_node <= num_branches(), "branch node out of range");
  require(a_t.size() == n, "split vector has wrong length");
  std::copy(a_t.data(), a_t.data() + n, a(branch_node));
  b(branch_node) = b_t;
}

Vector ObliqueTree::leaf_output(int leaf, const Vector& x) const {
  Vector u(m);
  const double* c = leaf_c.data() + static_cast<std::size_t>(leaf) * m * n;
  const double* d = leaf_d.data() + static_cast<std::size_t>(leaf) * m;
  for (int k = 0; k < m; ++k) {
    double acc = d[k];
    for (int j = 0; j < n; ++j) acc += c[k * n + j] * x[j];
    u[k] = acc;
  }
  return u;
}

void ObliqueTree::validate() const {
  require(depth >= 0 && depth <= 20, "tree depth must be in [0, 20]");
  require(n >= 1 && m >= 1, "tree needs n >= 1 and m >= 1");
  require(split_a.size() == static_cast<std::size_t>(num_branches()) * n &&
              split_b.size() == static_cast<std::size_t>(num_branches()) &&
              leaf_c.size() == static_cast<std::size_t>(num_leaves()) * m * n &&
              leaf_d.size() == static_cast<std::size_t>(num_leaves()) * m,
          "tree parameter arrays do not match depth/n/m");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  require(finite(split_a) && finite(split_b) && finite(leaf_c) && finite(leaf_d), "tree parameters must be finite");
}

bool ObliqueTree::operator==(const ObliqueTree& o) const {
  auto bits = [](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
    }
    return true;
  };
  return depth == o.depth && n == o.n && m == o.m && bits(split_a, o.split_a) && bits(split_b, o.split_b) &&
         bits(leaf_c, o.leaf_c) && bits(leaf_d, o.leaf_d);
}

namespace {

double split_dot(const ObliqueTree& tree, int t, const double* x) {
  const double* a = tree.a(t);
  double dot = a[0] * x[0];
  for (int j = 1; j < tree.n; ++j) dot = dot + a[j] * x[j];
  return dot;
}

// Heap id of the leaf reached from `node` at x.
int descend(const ObliqueTree& tree, int node, const double* x) {
  const int first_leaf = 1 << tree.depth;
  while (node < first_leaf) node = 2 * node + (split_dot(tree, node, x) <= tree.b(node) ? 0 : 1);
  return node;
}

}  // namespace

LeafPath leaf_index(const ObliqueTree& tree, const Vector& x) {
  require(x.size() == tree.n, "state has wrong dimension");
  LeafPath out;
  int t = 1;
  const int first_leaf = 1 << tree.depth;
  while (t < first_leaf) {
    const bool left = split_dot(tree, t, x.data()) <= tree.b(t);
    out.path.emplace_back(t, left);
    t = 2 * t + (left ? 0 : 1);
  }
  out.leaf_node = t;
  return out;
}

int route(const ObliqueTree& tree, const double* x) { return descend(tree, 1, x) - (1 << tree.depth); }

Vector predict(const ObliqueTree& tree, const Vector& x) {
  require(x.size() == tree.n, "state has wrong dimension");
  return tree.leaf_output(route(tree, x.data()), x);
}

void predict_into(const ObliqueTree& tree, const double* x, double* u) {
  const auto leaf = static_cast<std::size_t>(route(tree, x));
  const double* c = tree.leaf_c.data() + leaf * tree.m * tree.n;
  const double* d = tree.leaf_d.data() + leaf * tree.m;
  for (int k = 0; k < tree.m; ++k) {
    double acc = d[k];
    for (int j = 0; j < tree.n; ++j) acc += c[k * tree.n + j] * x[j];
    u[k] = acc;
  }
}

std::vector<std::int32_t> route_batch(const ObliqueTree& tree, const RowMatrix& X) {
  require(X.cols() == tree.n, "states have wrong dimension");
  std::vector<std::int32_t> leaves(static_cast<std::size_t>(X.rows()));
  kernels::active().route_batch(X.data(), leaves.size(), tree.n, tree.split_a.data(), tree.split_b.data(), tree.depth,
                                leaves.data());
  return leaves;
}

RowMatrix predict_batch(const ObliqueTree& tree, const RowMatrix& X) {
  const auto leaves = route_batch(tree, X);
  RowMatrix U(X.rows(), tree.m);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double* c = tree.leaf_c.data() + static_cast<std::size_t>(leaves[static_cast<std::size_t>(r)]) * tree.m * tree.n;
    const double* d = tree.leaf_d.data() + static_cast<std::size_t>(leaves[static_cast<std::size_t>(r)]) * tree.m;
    for (int k = 0; k < tree.m; ++k) {
      double acc = d[k];
      for (int j = 0; j < tree.n; ++j) acc += c[k * tree.n + j] * X(r, j);
      U(r, k) = acc;
    }
  }
  return U;
}

double spectral_norm(const Matrix& M, int max_iterations, double rel_tol) {
  if (M.size() == 0) return 0.0;
  // Power iteration on the smaller Gram matrix.
  const Matrix G = M.rows() <= M.cols() ? Matrix(M * M.transpose()) : Matrix(M.transpose() * M);
  if (G.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  Vector v = Vector::Ones(G.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += 1e-3 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector w = G * v;
    const double norm = w.norm();
    if (norm == 0.0) {
      // Start vector in the null space; restart along the largest-diagonal axis.
      Eigen::Index best = 0;
      G.diagonal().maxCoeff(&best);
      v = Vector::Unit(G.rows(), best);
      continue;
    }
    const double next = v.dot(w);
    v = w / norm;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(std::max(0.0, lambda));
}

double lipschitz_max(const ObliqueTree& tree) {
  double best = 0.0;
  for (int leaf = 0; leaf < tree.num_leaves(); ++leaf) best = std::max(best, spectral_norm(tree.leaf_gain(leaf)));
  return best;
}

namespace {

struct Halfspaces {
  std::vector<Vector> rows;
  std::vector<double> rhs;
  void add(const Vector& a, double b) {
    rows.push_back(a);
    rhs.push_back(b);
  }
};

void add_box(Halfspaces& hs, const StateBox& box) {
  const int n = box.dim();
  for (int j = 0; j < n; ++j) {
    hs.add(Vector::Unit(n, j), box.hi[j]);
    hs.add(-Vector::Unit(n, j), -box.lo[j]);
  }
}

Vector split_vector(const ObliqueTree& tree, int t) { return Eigen::Map<const Vector>(tree.a(t), tree.n); }

// Constraints for x to be routed through node `to` starting from `from`.
void add_path(Halfspaces& hs, const ObliqueTree& tree, int from, int to) {
  std::vector<int> chain;
  for (int t = to; t > from; t /= 2) chain.push_back(t);
  int parent = from;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    const Vector a = split_vector(tree, parent);
    if (*it == 2 * parent) {
      hs.add(a, tree.b(parent));
    } else {
      hs.add(-a, -tree.b(parent));
    }
    parent = *it;
  }
}

// The hyperplane a'x = b written as x = origin + basis * y.
struct FacetChart {
  Vector origin;
  Matrix basis;  // n x (n-1), orthonormal columns
};

FacetChart facet_chart(const Vector& a, double b) {
  const int n = static_cast<int>(a.size());
  FacetChart chart;
  chart.origin = a * (b / a.squaredNorm());
  const Matrix column = a;
  Eigen::HouseholderQR<Matrix> qr(column);
  const Matrix Q = qr.householderQ();
  chart.basis = Q.rightCols(n - 1);
  return chart;
}

// Pulls the halfspaces back to chart coordinates: M y <= h.
void chart_constraints(const Halfspaces& hs, const FacetChart& chart, Matrix& M, Vector& h) {
  const auto rows = static_cast<Eigen::Index>(hs.rows.size());
  M.resize(rows, chart.basis.cols());
  h.resize(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    M.row(i) = hs.rows[static_cast<std::size_t>(i)].transpose() * chart.basis;
    h[i] = hs.rhs[static_cast<std::size_t>(i)] - hs.rows[static_cast<std::size_t>(i)].dot(chart.origin);
  }
}

double law_gap(const ObliqueTree& tree, int left_leaf_node, int right_leaf_node, const Vector& x) {
  const int first = 1 << tree.depth;
  return (tree.leaf_output(left_leaf_node - first, x) - tree.leaf_output(right_leaf_node - first, x)).norm();
}

bool degenerate(const ObliqueTree& tree, int t) { return split_vector(tree, t).squaredNorm() == 0.0; }

}  // namespace

JumpEstimate estimate_max_jump(const ObliqueTree& tree, const StateBox& box, int samples_per_facet,
                               std::uint64_t seed) {
  require(samples_per_facet >= 1, "samples_per_facet must be >= 1");
  require(box.dim() == tree.n, "box dimension does not match the tree");
  box.validate();
  JumpEstimate est;
  Rng rng(seed);
  for (int t = 1; t <= tree.num_branches(); ++t) {
    if (degenerate(tree, t)) {
      ++est.degenerate_splits;
      continue;
    }
    Halfspaces hs;
    add_box(hs, box);
    add_path(hs, tree, 1, t);
    const FacetChart chart = facet_chart(split_vector(tree, t), tree.b(t));
    Matrix M;
    Vector h;
    chart_constraints(hs, chart, M, h);

    auto evaluate = [&](const Vector& x) {
      const int left = descend(tree, 2 * t, x.data());
      const int right = descend(tree, 2 * t + 1, x.data());
      est.value = std::max(est.value, law_gap(tree, left, right, x));
    };

    if (tree.n == 1) {
      const Vector x = chart.origin;
      if (h.size() == 0 || h.minCoeff() >= -1e-12) {
        ++est.facets_sampled;
        evaluate(x);
      }
      continue;
    }
    if (!normalize_rows(M, h)) continue;
    const ChebyshevBall ball = chebyshev_ball(M, h);
    if (!ball.feasible || ball.radius <= 1e-12) continue;
    ++est.facets_sampled;

    Vector y = ball.center;
    evaluate(chart.origin + chart.basis * y);
    const auto dim = chart.basis.cols();
    for (int s = 1; s < samples_per_facet; ++s) {
      Vector dir(dim);
      for (Eigen::Index j = 0; j < dim; ++j) dir[j] = rng.normal();
      const double len = dir.norm();
      if (len == 0.0) continue;
      dir /= len;
      double lo = -kInf, hi = kInf;
      const Vector Md = M * dir;
      const Vector slack = h - M * y;
      for (Eigen::Index i = 0; i < Md.size(); ++i) {
        if (Md[i] > 1e-14) {
          hi = std::min(hi, slack[i] / Md[i]);
        } else if (Md[i] < -1e-14) {
          lo = std::max(lo, slack[i] / Md[i]);
        }
      }
      if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) continue;
      y += rng.uniform(lo, hi) * dir;
      evaluate(chart.origin + chart.basis * y);
    }
  }
  return est;
}

JumpEstimate exact_max_jump(const ObliqueTree& tree, const StateBox& box) {
  require(tree.depth <= 4, "exact jump computation is limited to depth <= 4");
  require(tree.m == 1, "exact jump computation needs a single output");
  require(box.dim() == tree.n, "box dimension does not match the tree");
  box.validate();
  JumpEstimate est;
  est.exact = true;
  const int first = 1 << tree.depth;
  for (int t = 1; t <= tree.num_branches(); ++t) {
    if (degenerate(tree, t)) {
      ++est.degenerate_splits;
      continue;
    }
    const FacetChart chart = facet_chart(split_vector(tree, t), tree.b(t));
    const int span = first / (1 << (31 - __builtin_clz(static_cast<unsigned>(t))));  // leaves under each child
    const int half = span / 2;
    const int left_first = (2 * t) * half;
    const int right_first = (2 * t + 1) * half;
    bool touched = false;
    for (int L = left_first; L < left_first + half; ++L) {
      for (int R = right_first; R < right_first + half; ++R) {
        Halfspaces hs;
        add_box(hs, box);
        add_path(hs, tree, 1, t);
        add_path(hs, tree, 2 * t, L);
        add_path(hs, tree, 2 * t + 1, R);
        const Vector dc = (tree.leaf_gain(L - first) - tree.leaf_gain(R - first)).row(0).transpose();
        const double dd = tree.leaf_offset(L - first)[0] - tree.leaf_offset(R - first)[0];
        if (tree.n == 1) {
          const Vector x = chart.origin;
          bool inside = true;
          for (std::size_t i = 0; i < hs.rows.size(); ++i) inside = inside && hs.rows[i].dot(x) <= hs.rhs[i] + 1e-12;
          if (inside) {
            touched = true;
            est.value = std::max(est.value, std::abs(dc.dot(x) + dd));
          }
          continue;
        }
        Matrix M;
        Vector h;
        chart_constraints(hs, chart, M, h);
        if (!normalize_rows(M, h)) continue;
        const Vector obj = chart.basis.transpose() * dc;
        const double base = dc.dot(chart.origin) + dd;
        const LpResult up = solve_lp(obj, M, h);
        if (up.status != LpStatus::Optimal) continue;
        const LpResult down = solve_lp(-obj, M, h);
        touched = true;
        est.value = std::max(est.value, std::abs(up.objective + base));
        if (down.status == LpStatus::Optimal) est.value = std::max(est.value, std::abs(base - down.objective));
      }
    }
    if (touched) ++est.facets_sampled;
  }
  return est;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string linear_text(const double* coef, int n, const std::vector<std::string>& names) {
  std::string out;
  for (int j = 0; j < n; ++j) {
    if (coef[j] == 0.0) continue;
    const double v = coef[j];
    if (out.empty()) {
      out += (v < 0 ? "-" : "");
    } else {
      out += (v < 0 ? " - " : " + ");
    }
    out += fmt(std::abs(v)) + "*" + names[static_cast<std::size_t>(j)];
  }
  return out.empty() ? "0" : out;
}

std::vector<std::string> default_names(const std::vector<std::string>& given, int count, char prefix) {
  if (!given.empty()) {
    require(static_cast<int>(given.size()) == count, "wrong number of feature labels");
    return given;
  }
  std::vector<std::string> out;
  for (int i = 1; i <= count; ++i) out.push_back(std::string(1, prefix) + std::to_string(i));
  return out;
}

void emit_node(const ObliqueTree& tree, int t, int indent, const std::vector<std::string>& xs,
               const std::vector<std::string>& us, std::ostringstream& out) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  const int first = 1 << tree.depth;
  if (t >= first) {
    const int leaf = t - first;
    const double* c = tree.leaf_c.data() + static_cast<std::size_t>(leaf) * tree.m * tree.n;
    const double* d = tree.leaf_d.data() + static_cast<std::size_t>(leaf) * tree.m;
    out << pad;
    for (int k = 0; k < tree.m; ++k) {
      if (k) out << "; ";
      out << us[static_cast<std::size_t>(k)] << " = ";
      const bool has_gain = std::any_of(c + k * tree.n, c + (k + 1) * tree.n, [](double v) { return v != 0.0; });
      if (has_gain) {
        out << linear_text(c + k * tree.n, tree.n, xs);
        if (d[k] != 0.0) out << (d[k] < 0 ? " - " : " + ") << fmt(std::abs(d[k]));
      } else {
        out << fmt(d[k]);
      }
    }
    out << "    # leaf " << t << '\n';
    return;
  }
  const double* a = tree.a(t);
  out << pad << "if " << linear_text(a, tree.n, xs) << " <= " << fmt(tree.b(t));
  double norm = 0.0;
  for (int j = 0; j < tree.n; ++j) norm += a[j] * a[j];
  norm = std::sqrt(norm);
  if (norm > 0.0 && std::abs(norm - 1.0) > 1e-12) {
    std::vector<double> unit(a, a + tree.n);
    for (double& v : unit) v /= norm;
    out << "    # unit normal: " << linear_text(unit.data(), tree.n, xs) << " <= " << fmt(tree.b(t) / norm);
  } else if (norm == 0.0) {
    out << "    # padding, always true";
  }
  out << '\n';
  emit_node(tree, 2 * t, indent + 1, xs, us, out);
  out << pad << "else\n";
  emit_node(tree, 2 * t + 1, indent + 1, xs, us, out);
}

json doubles(const double* p, int count) { return json(std::vector<double>(p, p + count)); }

}  // namespace

std::string export_rules(const ObliqueTree& tree, const std::vector<std::string>& state_names,
                         const std::vector<std::string>& input_names) {
  tree.validate();
  const auto xs = default_names(state_names, tree.n, 'x');
  const auto us = default_names(input_names, tree.m, 'u');
  std::ostringstream out;
  emit_node(tree, 1, 0, xs, us, out);
  return out.str();
}

json tree_to_json(const ObliqueTree& tree) {
  tree.validate();
  json branches = json::array();
  for (int t = 1; t <= tree.num_branches(); ++t) {
    branches.push_back({{"a", doubles(tree.a(t), tree.n)}, {"b", tree.b(t)}});
  }
  json leaves = json::array();
  for (int leaf = 0; leaf < tree.num_leaves(); ++leaf) {
    const Matrix G = tree.leaf_gain(leaf);
    json c = json::array();
    for (int j = 0; j < tree.n; ++j) {
      json row = json::array();
      for (int k = 0; k < tree.m; ++k) row.push_back(G(k, j));
      c.push_back(row);
    }
    leaves.push_back({{"c", c}, {"d", doubles(tree.leaf_d.data() + static_cast<std::size_t>(leaf) * tree.m, tree.m)}});
  }
  return {{"format", "odtmpc-tree"}, {"version", 1},          {"depth", tree.depth}, {"n", tree.n},
          {"m", tree.m},             {"branches", branches}, {"leaves", leaves}};
}

ObliqueTree tree_from_json(const json& doc) {
  try {
    if (doc.contains("format") && doc.at("format") != "odtmpc-tree") fail(Errc::SchemaMismatch, "not a tree document");
    const int depth = doc.at("depth").get<int>();
    const int n = doc.at("n").get<int>();
    const int m = doc.at("m").get<int>();
    if (depth < 0 || depth > 20 || n < 1 || m < 1) fail(Errc::SchemaMismatch, "invalid tree dimensions");
    ObliqueTree tree(depth, n, m);
    const auto& branches = doc.at("branches");
    const auto& leaves = doc.at("leaves");
    if (static_cast<int>(branches.size()) != tree.num_branches() || static_cast<int>(leaves.size()) != tree.num_leaves()) {
      fail(Errc::SchemaMismatch, "branch/leaf counts do not match the depth");
    }
    for (int t = 1; t <= tree.num_branches(); ++t) {
      const auto& br = branches[static_cast<std::size_t>(t - 1)];
      const auto a = br.at("a").get<std::vector<double>>();
      if (static_cast<int>(a.size()) != n) fail(Errc::SchemaMismatch, "split vector has wrong length");
      std::copy(a.begin(), a.end(), tree.a(t));
      tree.b(t) = br.at("b").get<double>();
    }
    for (int leaf = 0; leaf < tree.num_leaves(); ++leaf) {
      const auto& lf = leaves[static_cast<std::size_t>(leaf)];
      const auto c = lf.at("c").get<std::vector<std::vector<double>>>();
      const auto d = lf.at("d").get<std::vector<double>>();
      if (static_cast<int>(c.size()) != n || static_cast<int>(d.size()) != m) {
        fail(Errc::SchemaMismatch, "leaf law has wrong shape");
      }
      Matrix G(m, n);
      for (int j = 0; j < n; ++j) {
        if (static_cast<int>(c[static_cast<std::size_t>(j)].size()) != m) fail(Errc::SchemaMismatch, "leaf gain row has wrong length");
        for (int k = 0; k < m; ++k) G(k, j) = c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      }
      tree.set_leaf(leaf, G, Eigen::Map<const Vector>(d.data(), m));
    }
    try {
      tree.validate();
    } catch (const Error& e) {
      fail(Errc::SchemaMismatch, e.what());
    }
    return tree;
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, std::string("tree document: ") + e.what());
  }
}

void save_tree(const ObliqueTree& tree, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(Errc::Io, "cannot open '" + path + "' for writing");
  out << tree_to_json(tree).dump(1) << '\n';
  if (!out) fail(Errc::Io, "write to '" + path + "' failed");
}

ObliqueTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::Io, "cannot open tree file '" + path + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::SchemaMismatch, "tree file '" + path + "': " + e.what());
  }
  return tree_from_json(doc);
}

}  // namespace odtmpc
