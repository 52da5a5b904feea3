#include "chdqr/density_model.hpp"

#include <cmath>

#include "chdqr/error.hpp"

namespace chdqr {

DensityNetwork DensityNetwork::create(int input_dim,
                                      const std::vector<int>& hidden,
                                      int output_dim, Rng& rng) {
  if (input_dim < 1) throw ConfigError("network input_dim must be >= 1");
  if (output_dim < 1) throw ConfigError("network output_dim must be >= 1");
  DensityNetwork net;
  net.input_dim_ = input_dim;
  int fan_in = input_dim;
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden layer size must be >= 1");
    double bound = std::sqrt(1.0 / fan_in);
    Eigen::MatrixXd w(h, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        w(r, c) = rng.uniform(-bound, bound);
    net.weights_.push_back(std::move(w));
    net.biases_.push_back(Eigen::VectorXd::Zero(h));
    fan_in = h;
  }
  net.head_weight_ = Eigen::MatrixXd::Zero(output_dim, fan_in);
  net.head_bias_ = Eigen::VectorXd::Zero(output_dim);
  return net;
}

DensityNetwork DensityNetwork::from_parameters(
    int input_dim, std::vector<Eigen::MatrixXd> weights,
    std::vector<Eigen::VectorXd> biases, Eigen::MatrixXd head_weight,
    Eigen::VectorXd head_bias) {
  if (weights.size() != biases.size())
    throw ConfigError("from_parameters: weight/bias layer count mismatch");
  DensityNetwork net;
  net.input_dim_ = input_dim;
  net.weights_ = std::move(weights);
  net.biases_ = std::move(biases);
  net.head_weight_ = std::move(head_weight);
  net.head_bias_ = std::move(head_bias);
  int fan_in = input_dim;
  for (std::size_t l = 0; l < net.weights_.size(); ++l) {
    if (net.weights_[l].cols() != fan_in ||
        net.weights_[l].rows() != net.biases_[l].size())
      throw ConfigError("from_parameters: inconsistent layer shapes");
    fan_in = static_cast<int>(net.weights_[l].rows());
  }
  if (net.head_weight_.cols() != fan_in ||
      net.head_weight_.rows() != net.head_bias_.size())
    throw ConfigError("from_parameters: inconsistent head shape");
  return net;
}

Eigen::MatrixXd DensityNetwork::forward_batch(const Eigen::MatrixXd& X,
                                              ForwardCache* cache) const {
  if (X.cols() != input_dim_)
    throw ConfigError("forward: input has " + std::to_string(X.cols()) +
                      " features, expected " + std::to_string(input_dim_));
  if (cache) {
    cache->input = X;
    cache->hidden.clear();
  }
  Eigen::MatrixXd a = X;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    a = (a * weights_[l].transpose()).rowwise() + biases_[l].transpose();
    a = a.cwiseMax(0.0);
    if (cache) cache->hidden.push_back(a);
  }
  return (a * head_weight_.transpose()).rowwise() + head_bias_.transpose();
}

Eigen::VectorXd DensityNetwork::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x.transpose()).row(0).transpose();
}

Gradients DensityNetwork::backward(const ForwardCache& cache,
                                   const Eigen::MatrixXd& d_logits) const {
  const std::size_t n_layers = weights_.size();
  Gradients g;
  g.d_weights.resize(n_layers);
  g.d_biases.resize(n_layers);
  const Eigen::MatrixXd& last =
      n_layers == 0 ? cache.input : cache.hidden.back();
  g.d_head_weight = d_logits.transpose() * last;
  g.d_head_bias = d_logits.colwise().sum().transpose();
  Eigen::MatrixXd delta = d_logits * head_weight_;  // B x h_last
  for (std::size_t l = n_layers; l-- > 0;) {
    // ReLU mask from the cached post-activation.
    delta = (cache.hidden[l].array() > 0.0).cast<double>() * delta.array();
    const Eigen::MatrixXd& prev = l == 0 ? cache.input : cache.hidden[l - 1];
    g.d_weights[l] = delta.transpose() * prev;
    g.d_biases[l] = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * weights_[l];
  }
  return g;
}

void DensityNetwork::remove_output_unit(int i) {
  const int k = output_dim();
  if (i < 0 || i >= k) throw ConfigError("remove_output_unit: bad index");
  if (k <= 1) throw ConfigError("remove_output_unit: last unit");
  Eigen::MatrixXd w(k - 1, head_weight_.cols());
  Eigen::VectorXd b(k - 1);
  w.topRows(i) = head_weight_.topRows(i);
  w.bottomRows(k - 1 - i) = head_weight_.bottomRows(k - 1 - i);
  b.head(i) = head_bias_.head(i);
  b.tail(k - 1 - i) = head_bias_.tail(k - 1 - i);
  head_weight_ = std::move(w);
  head_bias_ = std::move(b);
}

void DensityNetwork::add_output_unit(int i) {
  const int k = output_dim();
  if (i < 0 || i >= k) throw ConfigError("add_output_unit: bad index");
  head_weight_.conservativeResize(k + 1, Eigen::NoChange);
  head_weight_.row(k) = head_weight_.row(i);
  head_bias_.conservativeResize(k + 1);
  head_bias_[k] = head_bias_[i];
}

Eigen::VectorXd probs_from_logits(const Eigen::VectorXd& logits,
                                  const Eigen::VectorXd& log_areas) {
  if (logits.size() != log_areas.size())
    throw ConfigError("probs_from_logits: size mismatch");
  Eigen::VectorXd z = logits + log_areas;
  double m = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - m).exp();
  return e / e.sum();
}

RegionProbabilities region_probabilities(const DensityNetwork& net,
                                         const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& areas) {
  if (areas.size() != net.output_dim())
    throw ConfigError("region_probabilities: area count != K");
  if ((areas.array() <= 0).any())
    throw NumericError("region_probabilities: nonpositive area");
  RegionProbabilities rp;
  rp.log_density = net.forward(x);
  rp.probs = probs_from_logits(rp.log_density, areas.array().log().matrix());
  return rp;
}

void AdamTensor::init(Eigen::Index rows, Eigen::Index cols) {
  m = Eigen::MatrixXd::Zero(rows, cols);
  v = Eigen::MatrixXd::Zero(rows, cols);
}

void AdamTensor::update(Eigen::Ref<Eigen::MatrixXd> param,
                        const Eigen::MatrixXd& grad, double lr, long step) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  m = kBeta1 * m + (1.0 - kBeta1) * grad;
  v = kBeta2 * v.array().matrix() +
      (1.0 - kBeta2) * grad.array().square().matrix();
  double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
  double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
  param.array() -=
      lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
}

void AdamTensor::remove_row(int i) {
  const Eigen::Index r = m.rows();
  Eigen::MatrixXd nm(r - 1, m.cols()), nv(r - 1, v.cols());
  nm.topRows(i) = m.topRows(i);
  nm.bottomRows(r - 1 - i) = m.bottomRows(r - 1 - i);
  nv.topRows(i) = v.topRows(i);
  nv.bottomRows(r - 1 - i) = v.bottomRows(r - 1 - i);
  m = std::move(nm);
  v = std::move(nv);
}

void AdamTensor::add_row() {
  const Eigen::Index r = m.rows();
  m.conservativeResize(r + 1, Eigen::NoChange);
  v.conservativeResize(r + 1, Eigen::NoChange);
  m.row(r).setZero();
  v.row(r).setZero();
}

AdamState AdamState::for_network(const DensityNetwork& net) {
  AdamState s;
  for (const auto& w : net.weights()) {
    AdamTensor t;
    t.init(w.rows(), w.cols());
    s.hidden_w.push_back(std::move(t));
  }
  for (const auto& b : net.biases()) {
    AdamTensor t;
    t.init(b.size(), 1);
    s.hidden_b.push_back(std::move(t));
  }
  s.head_w.init(net.head_weight().rows(), net.head_weight().cols());
  s.head_b.init(net.head_bias().size(), 1);
  return s;
}

void AdamState::remove_head_row(int i) {
  head_w.remove_row(i);
  head_b.remove_row(i);
}

void AdamState::add_head_row() {
  head_w.add_row();
  head_b.add_row();
}

namespace {
bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }
}  // namespace

void apply_gradients(DensityNetwork& net, const Gradients& grads,
                     AdamState& state, double lr) {
  for (const auto& g : grads.d_weights)
    if (!all_finite(g)) throw NumericError("non-finite hidden-weight gradient");
  for (const auto& g : grads.d_biases)
    if (!all_finite(g)) throw NumericError("non-finite hidden-bias gradient");
  if (!all_finite(grads.d_head_weight) || !all_finite(grads.d_head_bias))
    throw NumericError("non-finite head gradient");
  ++state.step;
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    state.hidden_w[l].update(net.weights()[l], grads.d_weights[l], lr,
                             state.step);
    Eigen::Map<Eigen::MatrixXd> b(net.biases()[l].data(),
                                  net.biases()[l].size(), 1);
    state.hidden_b[l].update(b, grads.d_biases[l], lr, state.step);
  }
  state.head_w.update(net.head_weight(), grads.d_head_weight, lr, state.step);
  Eigen::Map<Eigen::MatrixXd> hb(net.head_bias().data(),
                                 net.head_bias().size(), 1);
  state.head_b.update(hb, grads.d_head_bias, lr, state.step);
}

}  // namespace chdqr
