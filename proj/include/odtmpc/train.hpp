#pragma once

#include "odtmpc/dataset.hpp"
#include "odtmpc/soft_tree.hpp"
#include "odtmpc/tree.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace odtmpc {

struct TrainConfig {
  int epochs = 200;
  int batch_size = 1024;
  double learning_rate = 1e-2;
  double alpha_start = 1.0;
  double alpha_growth = 1.3;  ///< multiplier per epoch
  double alpha_max = 512.0;
  std::uint64_t seed = 0;
  /// "lsq": leaves start at the global least-squares law plus noise.
  /// "local": each leaf starts at the least-squares law of the samples hard-routed to it.
  std::string init_scheme = "lsq";
  double validation_fraction = 0.1;
  /// Worker threads for gradient accumulation. Results do not depend on it.
  int threads = 1;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Reads the fields present in `doc` on top of `base`.
TrainConfig train_config_from_json(const nlohmann::json& doc, TrainConfig base = {});

struct TrainReport {
  std::vector<double> epoch_loss;  ///< mean per-sample soft loss of each epoch
  std::vector<double> epoch_alpha;
  double train_rmse = 0.0;       ///< hardened tree, training split
  double validation_rmse = 0.0;  ///< hardened tree, validation split (0 when empty)
  double soft_train_rmse = 0.0;  ///< blended soft predictions before hardening
  double hardening_delta = 0.0;  ///< train_rmse - soft_train_rmse
  double final_alpha = 0.0;
  double seconds = 0.0;
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
};

nlohmann::json train_report_to_json(const TrainReport& report);

struct TrainResult {
  ObliqueTree tree;  ///< hardened
  SoftTreeParams soft;
  TrainReport report;
};

/// Initial parameters per the configured scheme.
SoftTreeParams initialize_params(const RowMatrix& X, const RowMatrix& U, int depth, const TrainConfig& config);

/// Mini-batch Adam on soft_loss with the sharpness annealed geometrically,
/// followed by harden(). Throws Diverged if the loss becomes non-finite.
TrainResult train(const Dataset& data, int depth, const TrainConfig& config);

/// Freezes the splits and refits every leaf by ridge least squares on the
/// samples hard-routed to it. Empty leaves copy the law of the most populated
/// leaf in the nearest non-empty sibling subtree.
ObliqueTree harden(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U, double ridge = 1e-8);
inline ObliqueTree harden(const SoftTreeParams& params, const Dataset& data) { return harden(params, data.X, data.U); }

/// sqrt(sum ||u_hat - u||^2 / (rows * m)).
double rmse(const ObliqueTree& tree, const RowMatrix& X, const RowMatrix& U);
double soft_rmse(const SoftTreeParams& params, const RowMatrix& X, const RowMatrix& U);

}  // namespace odtmpc
