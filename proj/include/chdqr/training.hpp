#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "chdqr/data.hpp"
#include "chdqr/density_model.hpp"
#include "chdqr/geometry.hpp"

namespace chdqr {

enum class Method { grid, cqr, chdqr, chdqr_dynamic };

Method method_from_string(const std::string& s);
std::string method_to_string(Method m);

struct LossConfig {
  double lambda_q = 1.0;
  double lambda_rep = 0.1;
  double delta_rep = 0.0;  // <= 0: auto, 0.5 * (box volume / K_init)^(1/d)
  double tau = 0.1;        // in normalized target units (scaled by target std)
};

struct DynamicsConfig {
  bool enabled = false;
  double delta_add_scale = 5.0;   // delta_add = scale / K
  double delta_del_scale = 0.1;   // delta_del = scale / K
  double sigma = 0.0;             // jitter std; <= 0: auto, 0.25 * delta_rep
  int k_min = 2;
  int k_max = 10000;
};

struct TrainConfig {
  int epochs = 200;
  int batch = 256;
  double lr_theta = 1e-3;
  double lr_protos = 1e-2;
  std::uint64_t seed = 0;
  double padding = 0.1;
  std::vector<int> hidden = {64, 64};
  int k_init = 50;                 // used by proto_init == "data"
  int bins_per_dim = 50;           // used by grid method / proto_init == "grid"
  std::string proto_init = "grid"; // "grid" | "data"
  bool learn_protos = true;
  LossConfig loss;
  DynamicsConfig dynamics;
};

struct TrainState {
  DensityNetwork net;
  PrototypeSet protos;
  Eigen::VectorXd areas;
  int epoch = 0;
  AdamState opt_theta;
  AdamTensor opt_protos;
  long proto_step = 0;
  // Feature standardization (training-split statistics).
  Eigen::VectorXd feat_mean, feat_std;
  // Per-dimension target std, kept for the normalized PINAW column.
  Eigen::VectorXd target_std;
  // Effective scales in raw target units.
  double tau_eff = 0.1, delta_rep_eff = 0.0, sigma_eff = 0.0;
  std::vector<double> epoch_loss;
  std::vector<int> k_trajectory;

  Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) const;
};

// -sum_i q_i log P_i with the log-softmax evaluated in log space.
double loss_cross_entropy(const Eigen::VectorXd& soft_label,
                          const Eigen::VectorXd& logits,
                          const Eigen::VectorXd& log_areas);

// min_i ||y - c_i||; the subgradient touches only the argmin prototype
// (lowest index at ties). When grad is non-null the gradient is accumulated
// into the matching row.
double loss_quantization(const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& coords,
                         Eigen::MatrixXd* grad = nullptr);

// Hinge on closeness, sum_{i != j} max(0, delta_rep - ||c_i - c_j||), over
// ordered pairs. Near-pair search uses a uniform grid so large prototype sets
// stay O(K).
double loss_repulsion(const Eigen::MatrixXd& coords, double delta_rep,
                      Eigen::MatrixXd* grad = nullptr);

// Usage-driven resize pass: delete prototypes with U <= delta_del (descending
// index, floor k_min), then clone survivors with U >= delta_add jittered by
// N(0, sigma^2 I), ceiling k_max. Head rows and optimizer moments follow.
// Areas are recomputed before returning.
void add_remove_prototypes(TrainState& state, const DynamicsConfig& cfg,
                           const Eigen::MatrixXd& train_targets, double tau,
                           Rng& rng);

// Full training loop: seeded shuffling, composite loss with cross-entropy
// gradients routed to the network and quantization/repulsion gradients routed
// to the prototypes, per-epoch area recompute, optional dynamics pass.
TrainState fit(const Dataset& train, const TrainConfig& cfg);

}  // namespace chdqr
