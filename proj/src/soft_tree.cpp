#include "odtmpc/soft_tree.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace odtmpc {

void SoftTreeParams::validate() const {
  tree.validate();
  require(std::isfinite(alpha) && alpha > 0.0, "sigmoid sharpness alpha must be positive");
}

void SoftGradient::resize_like(const ObliqueTree& tree) {
  a.assign(tree.split_a.size(), 0.0);
  b.assign(tree.split_b.size(), 0.0);
  c.assign(tree.leaf_c.size(), 0.0);
  d.assign(tree.leaf_d.size(), 0.0);
}

void SoftGradient::zero() {
  std::fill(a.begin(), a.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
  std::fill(c.begin(), c.end(), 0.0);
  std::fill(d.begin(), d.end(), 0.0);
}

void SoftGradient::add(const SoftGradient& o) {
  auto acc = [](std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  };
  acc(a, o.a);
  acc(b, o.b);
  acc(c, o.c);
  acc(d, o.d);
}

namespace {

// log S(z) and log(1 - S(z)) = log S(-z) with one exp and one log1p.
struct LogSigmoid {
  double log_left, log_right, left;
};

inline LogSigmoid log_sigmoid(double z) {
  const double e = std::exp(-std::abs(z));
  const double l = std::log1p(e);
  LogSigmoid out;
  out.log_left = z < 0 ? z - l : -l;
  out.log_right = z > 0 ? -z - l : -l;
  out.left = z >= 0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  return out;
}

}  // namespace

void SoftEvaluator::prepare(const SoftTreeParams& p) {
  params_ = &p;
  const ObliqueTree& t = p.tree;
  n_ = t.n;
  m_ = t.m;
  depth_ = t.depth;
  branches_ = t.num_branches();
  leaves_ = t.num_leaves();
  const int K = leaves_ * m_;
  at_.resize(static_cast<std::size_t>(n_) * branches_);
  for (int br = 0; br < branches_; ++br) {
    for (int j = 0; j < n_; ++j) at_[static_cast<std::size_t>(j) * branches_ + br] = t.split_a[static_cast<std::size_t>(br) * n_ + j];
  }
  ct_.resize(static_cast<std::size_t>(n_) * K);
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < n_; ++j) ct_[static_cast<std::size_t>(j) * K + k] = t.leaf_c[static_cast<std::size_t>(k) * n_ + j];
  }
}

void SoftEvaluator::routing(const double* X, std::size_t rows) {
  const auto& kt = kernels::active();
  const int K = leaves_ * m_;
  const int nodes = 2 * leaves_ - 1;
  margin_.resize(rows * branches_);
  yhat_.resize(rows * K);
  sig_.resize(rows * branches_);
  logw_.resize(rows * nodes);
  if (branches_ > 0) kt.affine_columns(X, rows, n_, at_.data(), nullptr, branches_, margin_.data());
  kt.affine_columns(X, rows, n_, ct_.data(), params_->tree.leaf_d.data(), K, yhat_.data());
  const double alpha = params_->alpha;
  const double* b = params_->tree.split_b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* lw = logw_.data() + r * nodes - 1;  // 1-based heap view
    double* sg = sig_.data() + r * branches_;
    const double* q = margin_.data() + r * branches_;
    lw[1] = 0.0;
    for (int t = 1; t <= branches_; ++t) {
      const LogSigmoid ls = log_sigmoid(alpha * (b[t - 1] - q[t - 1]));
      sg[t - 1] = ls.left;
      lw[2 * t] = lw[t] + ls.log_left;
      lw[2 * t + 1] = lw[t] + ls.log_right;
    }
  }
}

void SoftEvaluator::forward(const double* X, std::size_t rows, double* out) {
  routing(X, rows);
  const int K = leaves_ * m_;
  const int nodes = 2 * leaves_ - 1;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lw = logw_.data() + r * nodes + (leaves_ - 1);
    const double* y = yhat_.data() + r * K;
    double* o = out + r * m_;
    std::fill(o, o + m_, 0.0);
    for (int l = 0; l < leaves_; ++l) {
      const double w = std::exp(lw[l]);
      for (int k = 0; k < m_; ++k) o[k] += w * y[l * m_ + k];
    }
  }
}

double SoftEvaluator::evaluate(const double* X, const double* U, std::size_t rows, SoftGradient* grad) {
  routing(X, rows);
  const int K = leaves_ * m_;
  const int nodes = 2 * leaves_ - 1;
  const double alpha = params_->alpha;
  if (grad) {
    sa_.resize(rows * branches_);
    sc_.resize(rows * K);
    subtree_.resize(static_cast<std::size_t>(nodes) + 1);
  }
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* lw = logw_.data() + r * nodes + (leaves_ - 1);
    const double* y = yhat_.data() + r * K;
    const double* u = U + r * m_;
    double row_loss = 0.0;
    for (int l = 0; l < leaves_; ++l) {
      const double w = std::exp(lw[l]);
      double e = 0.0;
      for (int k = 0; k < m_; ++k) {
        const double res = y[l * m_ + k] - u[k];
        e += res * res;
        if (grad) sc_[r * K + l * m_ + k] = 2.0 * w * res;
      }
      row_loss += w * e;
      if (grad) subtree_[static_cast<std::size_t>(leaves_ + l)] = w * e;
    }
    total += row_loss;
    if (!grad) continue;
    for (int t = branches_; t >= 1; --t) subtree_[t] = subtree_[2 * t] + subtree_[2 * t + 1];
    const double* sg = sig_.data() + r * branches_;
    for (int t = 1; t <= branches_; ++t) {
      const double s = sg[t - 1];
      const double gz = (1.0 - s) * subtree_[2 * t] - s * subtree_[2 * t + 1];
      grad->b[t - 1] += alpha * gz;
      sa_[r * branches_ + t - 1] = -alpha * gz;
    }
    for (int k = 0; k < K; ++k) grad->d[k] += sc_[r * K + k];
  }
  if (grad) {
    const auto& kt = kernels::active();
    gat_.assign(static_cast<std::size_t>(n_) * branches_, 0.0);
    gct_.assign(static_cast<std::size_t>(n_) * K, 0.0);
    if (branches_ > 0) kt.accumulate_outer(sa_.data(), rows, branches_, X, n_, gat_.data());
    kt.accumulate_outer(sc_.data(), rows, K, X, n_, gct_.data());
    for (int br = 0; br < branches_; ++br) {
      for (int j = 0; j < n_; ++j) grad->a[static_cast<std::size_t>(br) * n_ + j] += gat_[static_cast<std::size_t>(j) * branches_ + br];
    }
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < n_; ++j) grad->c[static_cast<std::size_t>(k) * n_ + j] += gct_[static_cast<std::size_t>(j) * K + k];
    }
  }
  return total;
}

Vector soft_leaf_weights(const SoftTreeParams& params, const Vector& x) {
  params.validate();
  require(x.size() == params.tree.n, "state has wrong dimension");
  const ObliqueTree& t = params.tree;
  std::vector<double> lw(static_cast<std::size_t>(t.num_nodes()) + 1, 0.0);
  for (int node = 1; node <= t.num_branches(); ++node) {
    double q = 0.0;
    for (int j = 0; j < t.n; ++j) q = q + t.a(node)[j] * x[j];
    const LogSigmoid ls = log_sigmoid(params.alpha * (t.b(node) - q));
    lw[static_cast<std::size_t>(2 * node)] = lw[static_cast<std::size_t>(node)] + ls.log_left;
    lw[static_cast<std::size_t>(2 * node + 1)] = lw[static_cast<std::size_t>(node)] + ls.log_right;
  }
  Vector w(t.num_leaves());
  for (int l = 0; l < t.num_leaves(); ++l) w[l] = std::exp(lw[static_cast<std::size_t>(t.num_leaves() + l)]);
  return w;
}

Vector soft_forward(const SoftTreeParams& params, const Vector& x) {
  const Vector w = soft_leaf_weights(params, x);
  Vector u = Vector::Zero(params.tree.m);
  for (int l = 0; l < params.tree.num_leaves(); ++l) u += w[l] * params.tree.leaf_output(l, x);
  return u;
}

double soft_loss(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U) {
  params.validate();
  require(X.rows() > 0 && X.rows() == U.rows(), "loss needs a nonempty batch");
  require(X.cols() == params.tree.n && U.cols() == params.tree.m, "batch has wrong dimensions");
  SoftEvaluator ev;
  ev.prepare(params);
  return ev.evaluate(X.data(), U.data(), static_cast<std::size_t>(X.rows()), nullptr);
}

SoftGradient soft_grad(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U) {
  params.validate();
  require(X.rows() > 0 && X.rows() == U.rows(), "gradient needs a nonempty batch");
  require(X.cols() == params.tree.n && U.cols() == params.tree.m, "batch has wrong dimensions");
  SoftEvaluator ev;
  ev.prepare(params);
  SoftGradient g;
  g.resize_like(params.tree);
  ev.evaluate(X.data(), U.data(), static_cast<std::size_t>(X.rows()), &g);
  return g;
}

}  // namespace odtmpc
