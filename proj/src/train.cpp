#include "odtmpc/train.hpp"

#include "odtmpc/errors.hpp"
#include "odtmpc/random.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace odtmpc {

using nlohmann::json;

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch size must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning rate must be positive");
  require(std::isfinite(alpha_start) && alpha_start > 0.0, "alpha_start must be positive");
  require(std::isfinite(alpha_growth) && alpha_growth >= 1.0, "alpha_growth must be >= 1");
  require(std::isfinite(alpha_max) && alpha_max >= alpha_start, "alpha_max must be >= alpha_start");
  require(validation_fraction >= 0.0 && validation_fraction <= 0.5, "validation fraction must be in [0, 0.5]");
  require(init_scheme == "lsq" || init_scheme == "local", "unknown init scheme '" + init_scheme + "'");
  require(threads >= 1, "threads must be >= 1");
}

json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"alpha_start", c.alpha_start},
          {"alpha_growth", c.alpha_growth},
          {"alpha_max", c.alpha_max},
          {"seed", c.seed},
          {"init_scheme", c.init_scheme},
          {"validation_fraction", c.validation_fraction}};
}

TrainConfig train_config_from_json(const json& doc, TrainConfig c) {
  try {
    if (doc.contains("epochs")) c.epochs = doc.at("epochs").get<int>();
    if (doc.contains("batch_size")) c.batch_size = doc.at("batch_size").get<int>();
    if (doc.contains("learning_rate")) c.learning_rate = doc.at("learning_rate").get<double>();
    if (doc.contains("alpha_start")) c.alpha_start = doc.at("alpha_start").get<double>();
    if (doc.contains("alpha_growth")) c.alpha_growth = doc.at("alpha_growth").get<double>();
    if (doc.contains("alpha_max")) c.alpha_max = doc.at("alpha_max").get<double>();
    if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("init_scheme")) c.init_scheme = doc.at("init_scheme").get<std::string>();
    if (doc.contains("validation_fraction")) c.validation_fraction = doc.at("validation_fraction").get<double>();
  } catch (const json::exception& e) {
    fail(Errc::InvalidArgument, std::string("train config: ") + e.what());
  }
  return c;
}

json train_report_to_json(const TrainReport& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"epoch_alpha", r.epoch_alpha},
          {"train_rmse", r.train_rmse},
          {"validation_rmse", r.validation_rmse},
          {"soft_train_rmse", r.soft_train_rmse},
          {"hardening_delta", r.hardening_delta},
          {"final_alpha", r.final_alpha},
          {"seconds", r.seconds},
          {"train_rows", r.train_rows},
          {"validation_rows", r.validation_rows}};
}

namespace {

constexpr std::size_t kChunkRows = 256;

struct LeafFit {
  Matrix gain;
  Vector offset;
};

// Ridge least squares of U on [X, 1] over the selected rows.
LeafFit fit_affine(const RowMatrix& X, const RowMatrix& U, const std::vector<Eigen::Index>& rows, double ridge) {
  const auto n = X.cols();
  const auto m = U.cols();
  Matrix AtA = Matrix::Zero(n + 1, n + 1);
  Matrix AtU = Matrix::Zero(n + 1, m);
  Vector phi(n + 1);
  for (const auto r : rows) {
    phi.head(n) = X.row(r).transpose();
    phi[n] = 1.0;
    AtA.selfadjointView<Eigen::Lower>().rankUpdate(phi);
    AtU += phi * U.row(r);
  }
  AtA = AtA.selfadjointView<Eigen::Lower>();
  AtA.diagonal().array() += ridge;
  const Matrix W = AtA.ldlt().solve(AtU);
  return {W.topRows(n).transpose(), W.row(n).transpose()};
}

std::vector<Eigen::Index> all_rows(Eigen::Index count) {
  std::vector<Eigen::Index> v(static_cast<std::size_t>(count));
  std::iota(v.begin(), v.end(), Eigen::Index{0});
  return v;
}

void shuffle(std::vector<Eigen::Index>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
}

struct Adam {
  double lr = 1e-2, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<double> m, v;

  void update(std::vector<double>& theta, const std::vector<double>& g, std::size_t offset, double c1, double c2) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double& mi = m[offset + i];
      double& vi = v[offset + i];
      mi = beta1 * mi + (1.0 - beta1) * g[i];
      vi = beta2 * vi + (1.0 - beta2) * g[i] * g[i];
      theta[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
    }
  }
};

}  // namespace

SoftTreeParams initialize_params(const RowMatrix& X, const RowMatrix& U, int depth, const TrainConfig& config) {
  config.validate();
  require(X.rows() > 0 && X.rows() == U.rows(), "initialization needs data");
  const int n = static_cast<int>(X.cols());
  const int m = static_cast<int>(U.cols());
  SoftTreeParams p;
  p.tree = ObliqueTree(depth, n, m);
  p.alpha = config.alpha_start;
  Rng rng(config.seed);
  const Vector mean = X.colwise().mean().transpose();
  const double sigma = 1.0 / std::sqrt(static_cast<double>(n));
  for (int t = 1; t <= p.tree.num_branches(); ++t) {
    Vector a(n);
    for (int j = 0; j < n; ++j) a[j] = sigma * rng.normal();
    p.tree.set_split(t, a, a.dot(mean));
  }
  if (config.init_scheme == "local") {
    p.tree = harden(p, X, U);
    return p;
  }
  const LeafFit global = fit_affine(X, U, all_rows(X.rows()), 1e-8);
  for (int leaf = 0; leaf < p.tree.num_leaves(); ++leaf) {
    Matrix G = global.gain;
    Vector d = global.offset;
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] += 1e-2 * rng.normal();
    for (Eigen::Index i = 0; i < d.size(); ++i) d[i] += 1e-2 * rng.normal();
    p.tree.set_leaf(leaf, G, d);
  }
  return p;
}

ObliqueTree harden(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U, double ridge) {
  params.tree.validate();
  require(X.rows() > 0 && X.rows() == U.rows(), "hardening needs data");
  require(X.cols() == params.tree.n && U.cols() == params.tree.m, "data dimensions do not match the tree");
  ObliqueTree tree = params.tree;
  const int leaves = tree.num_leaves();
  const auto routes = route_batch(tree, X);
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(leaves));
  for (std::size_t r = 0; r < routes.size(); ++r) members[static_cast<std::size_t>(routes[r])].push_back(static_cast<Eigen::Index>(r));
  std::vector<bool> filled(static_cast<std::size_t>(leaves), false);
  for (int leaf = 0; leaf < leaves; ++leaf) {
    const auto& rows = members[static_cast<std::size_t>(leaf)];
    if (rows.empty()) continue;
    const LeafFit fit = fit_affine(X, U, rows, ridge);
    tree.set_leaf(leaf, fit.gain, fit.offset);
    filled[static_cast<std::size_t>(leaf)] = true;
  }
  for (int leaf = 0; leaf < leaves; ++leaf) {
    if (filled[static_cast<std::size_t>(leaf)]) continue;
    // Climb until the sibling subtree holds data; copy its busiest leaf.
    for (int span = 1; span < leaves; span *= 2) {
      const int block = leaf / span;
      const int sibling_first = (block ^ 1) * span;
      int best = -1;
      std::size_t best_count = 0;
      for (int s = sibling_first; s < sibling_first + span; ++s) {
        const auto count = members[static_cast<std::size_t>(s)].size();
        if (count > best_count) {
          best_count = count;
          best = s;
        }
      }
      if (best >= 0) {
        tree.set_leaf(leaf, tree.leaf_gain(best), tree.leaf_offset(best));
        break;
      }
    }
  }
  return tree;
}

double rmse(const ObliqueTree& tree, const RowMatrix& X, const RowMatrix& U) {
  require(X.rows() > 0 && X.rows() == U.rows(), "rmse needs data");
  const RowMatrix P = predict_batch(tree, X);
  return std::sqrt((P - U).squaredNorm() / static_cast<double>(U.size()));
}

double soft_rmse(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U) {
  require(X.rows() > 0 && X.rows() == U.rows(), "rmse needs data");
  params.validate();
  SoftEvaluator ev;
  ev.prepare(params);
  RowMatrix P(X.rows(), U.cols());
  ev.forward(X.data(), static_cast<std::size_t>(X.rows()), P.data());
  return std::sqrt((P - U).squaredNorm() / static_cast<double>(U.size()));
}

TrainResult train(const Dataset& data, int depth, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  require(depth >= 0 && depth <= 16, "depth must be in [0, 16]");
  require(data.rows() > 0 && data.U.rows() == data.rows(), "dataset is empty");

  Rng split_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto order = all_rows(data.rows());
  shuffle(order, split_rng);
  const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(order.size())));
  const std::size_t n_train = order.size() - n_val;
  require(n_train >= static_cast<std::size_t>(1) << depth, "dataset has fewer training rows than leaves");
  RowMatrix Xt(static_cast<Eigen::Index>(n_train), data.n()), Ut(static_cast<Eigen::Index>(n_train), data.m());
  RowMatrix Xv(static_cast<Eigen::Index>(n_val), data.n()), Uv(static_cast<Eigen::Index>(n_val), data.m());
  // Training rows keep dataset order; the split itself is random.
  std::vector<Eigen::Index> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<Eigen::Index> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  for (std::size_t i = 0; i < n_train; ++i) {
    Xt.row(static_cast<Eigen::Index>(i)) = data.X.row(train_idx[i]);
    Ut.row(static_cast<Eigen::Index>(i)) = data.U.row(train_idx[i]);
  }
  for (std::size_t i = 0; i < n_val; ++i) {
    Xv.row(static_cast<Eigen::Index>(i)) = data.X.row(val_idx[i]);
    Uv.row(static_cast<Eigen::Index>(i)) = data.U.row(val_idx[i]);
  }

  TrainResult result;
  SoftTreeParams& p = result.soft;
  p = initialize_params(Xt, Ut, depth, config);
  ObliqueTree& tr = p.tree;

  const std::size_t sizes[4] = {tr.split_a.size(), tr.split_b.size(), tr.leaf_c.size(), tr.leaf_d.size()};
  const std::size_t offsets[4] = {0, sizes[0], sizes[0] + sizes[1], sizes[0] + sizes[1] + sizes[2]};
  Adam adam;
  adam.lr = config.learning_rate;
  adam.m.assign(offsets[3] + sizes[3], 0.0);
  adam.v.assign(offsets[3] + sizes[3], 0.0);

  const auto batch = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), n_train);
  const std::size_t max_chunks = (batch + kChunkRows - 1) / kChunkRows;
  std::vector<SoftGradient> partial(max_chunks);
  std::vector<double> partial_loss(max_chunks);
  for (auto& g : partial) g.resize_like(tr);
  std::vector<SoftEvaluator> evaluators(static_cast<std::size_t>(config.threads));
  SoftGradient total;
  total.resize_like(tr);
  RowMatrix Xb(static_cast<Eigen::Index>(batch), data.n()), Ub(static_cast<Eigen::Index>(batch), data.m());

  Rng batch_rng(config.seed + 1);
  auto perm = all_rows(static_cast<Eigen::Index>(n_train));
  double alpha = config.alpha_start;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    p.alpha = alpha;
    shuffle(perm, batch_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_train; start += batch) {
      const std::size_t rows = std::min(batch, n_train - start);
      for (std::size_t i = 0; i < rows; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = Xt.row(perm[start + i]);
        Ub.row(static_cast<Eigen::Index>(i)) = Ut.row(perm[start + i]);
      }
      const std::size_t chunks = (rows + kChunkRows - 1) / kChunkRows;
      for (auto& ev : evaluators) ev.prepare(p);
      detail::parallel_slices(chunks, config.threads, [&](std::size_t c0, std::size_t c1, int worker) {
        auto& ev = evaluators[static_cast<std::size_t>(worker)];
        for (std::size_t c = c0; c < c1; ++c) {
          const std::size_t r0 = c * kChunkRows;
          const std::size_t nr = std::min(kChunkRows, rows - r0);
          partial[c].zero();
          partial_loss[c] = ev.evaluate(Xb.data() + r0 * data.n(), Ub.data() + r0 * data.m(), nr, &partial[c]);
        }
      });
      total.zero();
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < chunks; ++c) {
        total.add(partial[c]);
        batch_loss += partial_loss[c];
      }
      if (!std::isfinite(batch_loss)) {
        fail(Errc::Diverged, "loss became non-finite in epoch " + std::to_string(epoch) +
                                 (result.report.epoch_loss.empty()
                                      ? std::string()
                                      : "; last finite epoch loss " + std::to_string(result.report.epoch_loss.back())));
      }
      epoch_loss += batch_loss;
      const double scale = 1.0 / static_cast<double>(rows);
      for (auto* g : {&total.a, &total.b, &total.c, &total.d}) {
        for (double& v : *g) v *= scale;
      }
      ++adam.step;
      const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.step));
      const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.step));
      adam.update(tr.split_a, total.a, offsets[0], c1, c2);
      adam.update(tr.split_b, total.b, offsets[1], c1, c2);
      adam.update(tr.leaf_c, total.c, offsets[2], c1, c2);
      adam.update(tr.leaf_d, total.d, offsets[3], c1, c2);
    }
    for (const auto* v : {&tr.split_a, &tr.split_b, &tr.leaf_c, &tr.leaf_d}) {
      if (!std::all_of(v->begin(), v->end(), [](double x) { return std::isfinite(x); })) {
        fail(Errc::Diverged, "parameters became non-finite in epoch " + std::to_string(epoch));
      }
    }
    result.report.epoch_loss.push_back(epoch_loss / static_cast<double>(n_train));
    result.report.epoch_alpha.push_back(alpha);
    alpha = std::min(config.alpha_max, alpha * config.alpha_growth);
  }

  TrainReport& rep = result.report;
  rep.final_alpha = p.alpha;
  rep.soft_train_rmse = soft_rmse(p, Xt, Ut);
  result.tree = harden(p, Xt, Ut);
  rep.train_rmse = rmse(result.tree, Xt, Ut);
  rep.validation_rmse = n_val > 0 ? rmse(result.tree, Xv, Uv) : 0.0;
  rep.hardening_delta = rep.train_rmse - rep.soft_train_rmse;
  rep.train_rows = n_train;
  rep.validation_rows = n_val;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace odtmpc
