#ifndef ARDNAS_CONFIG_HPP
#define ARDNAS_CONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ardnas/hyper.hpp"
#include "ardnas/supergraph.hpp"

namespace ardnas {

/// Every knob of a run. Defaults follow the reference training setup; see README for the table.
struct SearchConfig {
  // sparsity / priors
  double lambda_w = 0.01;  // reweighted l1 (or group l2) strength on w
  double lambda = 0.01;    // l2 decay on operation weights
  double sigma2 = 0.01;    // likelihood noise variance; curvature enters the updates as H / sigma2
  double curvature_scale = 1.0;  // extra multiplier on H (e.g. the training-set size for a sum-form energy)
  std::size_t t_max = 20;
  std::size_t epochs_per_iteration = 1;
  std::size_t curvature_batch = 256;
  std::size_t batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double omega_floor = kDefaultOmegaFloor;
  double switch_cap = kDefaultSwitchCap;
  double prune_threshold = kEntropyThreshold;
  std::string hessian_mode = "exact";  // exact | diagonal | approx-hessian
  bool proximal = false;
  bool prune_dead_ends = true;
  double early_stop_tol = 1e-6;
  std::size_t retrain_epochs = 5;
  double retrain_learning_rate = 0.05;

  // task
  std::string task = "synthetic";  // synthetic | proxy-synthetic | mnist-lenet300 | mnist-lenet5
  std::size_t nodes = 5;
  std::size_t edges = 12;
  std::size_t planted = 3;
  std::size_t width = 4;
  std::size_t train_samples = 512;
  std::size_t test_samples = 256;
  std::size_t cells = 2;
  std::size_t cell_nodes = 4;  // proxy task: nodes per cell; edges/planted then count per cell
  bool train_op_weights = false;

  // compression
  std::vector<std::vector<std::string>> patterns;  // per weighted layer
  std::vector<double> layer_lambda;                 // per weighted layer, lambda^l
  double compress_threshold = kEntropyThreshold;
  std::size_t train_limit = 0;  // 0 = whole training split
};

}  // namespace ardnas

#endif  // ARDNAS_CONFIG_HPP
