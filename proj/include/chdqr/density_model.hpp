#pragma once

#include <Eigen/Dense>
#include <vector>

#include "chdqr/rng.hpp"

namespace chdqr {

struct ForwardCache {
  Eigen::MatrixXd input;                 // B x input_dim
  std::vector<Eigen::MatrixXd> hidden;   // post-ReLU activations, B x h_l
};

struct Gradients {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;
  Eigen::MatrixXd d_head_weight;
  Eigen::VectorXd d_head_bias;
};

// Feed-forward log-density estimator with a resizable final linear layer.
// Hidden layers use ReLU; the head is linear with one output row per
// prototype. Forward/backward are explicit so head rows can be added and
// removed without disturbing the surviving logits.
class DensityNetwork {
 public:
  DensityNetwork() = default;

  // Hidden layers get scaled-uniform fan-in init; the head starts at zero so
  // the initial density is area-proportional.
  static DensityNetwork create(int input_dim, const std::vector<int>& hidden,
                               int output_dim, Rng& rng);

  // Rebuilds a network from explicit parameter tensors (checkpoint load).
  static DensityNetwork from_parameters(int input_dim,
                                        std::vector<Eigen::MatrixXd> weights,
                                        std::vector<Eigen::VectorXd> biases,
                                        Eigen::MatrixXd head_weight,
                                        Eigen::VectorXd head_bias);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return static_cast<int>(head_weight_.rows()); }
  int n_hidden_layers() const { return static_cast<int>(weights_.size()); }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  // Rows of X are samples; returns B x K logits. When cache is non-null the
  // activations are retained for backward().
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X,
                                ForwardCache* cache = nullptr) const;
  Gradients backward(const ForwardCache& cache,
                     const Eigen::MatrixXd& d_logits) const;

  void remove_output_unit(int i);
  void add_output_unit(int i);  // appends a copy of row i

  // Parameter access (checkpointing, tests, optimizer).
  std::vector<Eigen::MatrixXd>& weights() { return weights_; }
  std::vector<Eigen::VectorXd>& biases() { return biases_; }
  Eigen::MatrixXd& head_weight() { return head_weight_; }
  Eigen::VectorXd& head_bias() { return head_bias_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }
  const Eigen::MatrixXd& head_weight() const { return head_weight_; }
  const Eigen::VectorXd& head_bias() const { return head_bias_; }

 private:
  int input_dim_ = 0;
  std::vector<Eigen::MatrixXd> weights_;  // layer l: h_l x h_{l-1}
  std::vector<Eigen::VectorXd> biases_;
  Eigen::MatrixXd head_weight_;           // K x h_last
  Eigen::VectorXd head_bias_;             // K
};

struct RegionProbabilities {
  Eigen::VectorXd log_density;  // f(x), one entry per region
  Eigen::VectorXd probs;        // softmax(f(x) + log A)
};

// Normalized region probabilities via log-sum-exp over f(x)_i + log A_i.
RegionProbabilities region_probabilities(const DensityNetwork& net,
                                         const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& areas);

// Same normalization given precomputed logits.
Eigen::VectorXd probs_from_logits(const Eigen::VectorXd& logits,
                                  const Eigen::VectorXd& log_areas);

// Adam moments for one tensor; head moments are row-resized in lockstep with
// the network (fresh rows start at zero).
struct AdamTensor {
  Eigen::MatrixXd m, v;
  void init(Eigen::Index rows, Eigen::Index cols);
  void update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::MatrixXd& grad,
              double lr, long step);
  void remove_row(int i);
  void add_row();
};

struct AdamState {
  std::vector<AdamTensor> hidden_w, hidden_b;
  AdamTensor head_w, head_b;
  long step = 0;
  static AdamState for_network(const DensityNetwork& net);
  void remove_head_row(int i);
  void add_head_row();
};

// One Adam step (beta1=0.9, beta2=0.999, eps=1e-8). Throws NumericError on
// non-finite gradients; parameters are untouched in that case.
void apply_gradients(DensityNetwork& net, const Gradients& grads,
                     AdamState& state, double lr);

}  // namespace chdqr
