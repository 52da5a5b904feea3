#include "chdqr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "chdqr/baselines.hpp"
#include "chdqr/error.hpp"
#include "chdqr/quantizer.hpp"

namespace chdqr {

Method method_from_string(const std::string& s) {
  if (s == "grid") return Method::grid;
  if (s == "cqr") return Method::cqr;
  if (s == "chdqr") return Method::chdqr;
  if (s == "chdqr-dynamic") return Method::chdqr_dynamic;
  throw ConfigError("unknown method '" + s +
                    "' (expected grid|cqr|chdqr|chdqr-dynamic)");
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::grid: return "grid";
    case Method::cqr: return "cqr";
    case Method::chdqr: return "chdqr";
    case Method::chdqr_dynamic: return "chdqr-dynamic";
  }
  return "?";
}

Eigen::MatrixXd TrainState::standardize(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out = x.rowwise() - feat_mean.transpose();
  out.array().rowwise() /= feat_std.transpose().array();
  return out;
}

double loss_cross_entropy(const Eigen::VectorXd& soft_label,
                          const Eigen::VectorXd& logits,
                          const Eigen::VectorXd& log_areas) {
  if (soft_label.size() != logits.size() || logits.size() != log_areas.size())
    throw ConfigError("loss_cross_entropy: length mismatch");
  Eigen::VectorXd z = logits + log_areas;
  double m = z.maxCoeff();
  double lse = m + std::log((z.array() - m).exp().sum());
  return -soft_label.dot(z) + soft_label.sum() * lse;
}

double loss_quantization(const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& coords, Eigen::MatrixXd* grad) {
  int i = nearest_prototype(coords, y);
  Eigen::VectorXd diff = coords.row(i).transpose() - y;
  double dist = diff.norm();
  if (grad && dist > 0) grad->row(i) += (diff / dist).transpose();
  return dist;
}

namespace {

// Near-pair enumeration within radius delta via a uniform grid hash.
template <typename Fn>
void for_near_pairs(const Eigen::MatrixXd& coords, double delta, Fn&& fn) {
  const int k = static_cast<int>(coords.rows());
  const int d = static_cast<int>(coords.cols());
  if (k <= 256) {
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) {
        double dist = (coords.row(i) - coords.row(j)).norm();
        if (dist < delta) fn(i, j, dist);
      }
    return;
  }
  Eigen::VectorXd lo = coords.colwise().minCoeff();
  auto cell_of = [&](int i, int axis) {
    return static_cast<long>(std::floor((coords(i, axis) - lo[axis]) / delta));
  };
  std::unordered_map<long long, std::vector<int>> cells;
  cells.reserve(static_cast<std::size_t>(k) * 2);
  for (int i = 0; i < k; ++i) {
    long cx = cell_of(i, 0);
    long cy = d == 2 ? cell_of(i, 1) : 0;
    cells[(static_cast<long long>(cx) << 32) ^ (cy & 0xffffffffLL)].push_back(i);
  }
  for (int i = 0; i < k; ++i) {
    long cx = cell_of(i, 0);
    long cy = d == 2 ? cell_of(i, 1) : 0;
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = (d == 2 ? -1 : 0); dy <= (d == 2 ? 1 : 0); ++dy) {
        auto it = cells.find((static_cast<long long>(cx + dx) << 32) ^
                             ((cy + dy) & 0xffffffffLL));
        if (it == cells.end()) continue;
        for (int j : it->second) {
          if (j <= i) continue;
          double dist = (coords.row(i) - coords.row(j)).norm();
          if (dist < delta) fn(i, j, dist);
        }
      }
  }
}

}  // namespace

double loss_repulsion(const Eigen::MatrixXd& coords, double delta_rep,
                      Eigen::MatrixXd* grad) {
  if (!(delta_rep > 0)) throw ConfigError("loss_repulsion: delta_rep <= 0");
  double total = 0.0;
  for_near_pairs(coords, delta_rep, [&](int i, int j, double dist) {
    total += 2.0 * (delta_rep - dist);  // ordered-pair double count
    if (grad && dist > 0) {
      Eigen::RowVectorXd dir = (coords.row(i) - coords.row(j)) / dist;
      grad->row(i) -= 2.0 * dir;
      grad->row(j) += 2.0 * dir;
    }
  });
  return total;
}

namespace {

PrototypeSet init_prototypes(const TrainConfig& cfg, const BoundingBox& box,
                             const Eigen::MatrixXd& targets, Rng& rng) {
  if (cfg.proto_init == "grid") {
    GridSpec spec;
    spec.bins_per_dim = cfg.bins_per_dim;
    spec.box = box;
    return build_grid(spec).protos;
  }
  if (cfg.proto_init != "data")
    throw ConfigError("proto_init must be 'grid' or 'data'");
  const int d = box.dim();
  const int k = cfg.k_init;
  if (k < 2) throw ConfigError("k_init must be >= 2");
  PrototypeSet protos;
  protos.box = box;
  protos.coords.resize(k, d);
  Eigen::VectorXd extent = box.upper - box.lower;
  if (targets.rows() >= k) {
    // Sample targets without replacement, plus a small jitter.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(targets.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (int i = 0; i < k; ++i) {
      Eigen::VectorXd p = targets.row(idx[static_cast<std::size_t>(i)])
                              .transpose();
      for (int j = 0; j < d; ++j) p[j] += rng.normal(0.0, 0.01 * extent[j]);
      protos.coords.row(i) = box.clamp(p).transpose();
    }
  } else {
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < d; ++j)
        protos.coords(i, j) = rng.uniform(box.lower[j], box.upper[j]);
  }
  return protos;
}

// Nudges coincident prototypes apart so the tessellation stays valid after
// box clamping pushed two of them onto the same point.
void resolve_duplicates(PrototypeSet& protos, Rng& rng) {
  const int d = protos.dim();
  Eigen::VectorXd extent = protos.box.upper - protos.box.lower;
  const double eps = 1e-7;
  for (int attempt = 0; attempt < 16; ++attempt) {
    bool clean = true;
    for (int i = 0; i < protos.k() && clean; ++i)
      for (int j = i + 1; j < protos.k(); ++j)
        if ((protos.coords.row(i) - protos.coords.row(j)).norm() < 1e-10) {
          Eigen::VectorXd p = protos.coords.row(j).transpose();
          for (int a = 0; a < d; ++a)
            p[a] += rng.normal(0.0, eps * extent[a]);
          protos.coords.row(j) = protos.box.clamp(p).transpose();
          clean = false;
          break;
        }
    if (clean) return;
  }
}

}  // namespace

void add_remove_prototypes(TrainState& state, const DynamicsConfig& cfg,
                           const Eigen::MatrixXd& train_targets, double tau,
                           Rng& rng) {
  if (train_targets.rows() == 0)
    throw DataError("add_remove_prototypes: empty training targets");
  const int k0 = state.protos.k();
  const double delta_del = cfg.delta_del_scale / k0;
  const double delta_add = cfg.delta_add_scale / k0;
  if (!(delta_del < delta_add))
    throw ConfigError("dynamics: delta_del must be < delta_add");
  Eigen::VectorXd u = usage(state.protos, train_targets, tau);

  // Deletion pass, descending index so earlier indices stay valid.
  std::vector<double> survivor_usage(u.data(), u.data() + u.size());
  for (int i = k0 - 1; i >= 0; --i) {
    if (state.protos.k() <= cfg.k_min) break;
    if (u[i] <= delta_del) {
      const int k = state.protos.k();
      Eigen::MatrixXd coords(k - 1, state.protos.dim());
      coords.topRows(i) = state.protos.coords.topRows(i);
      coords.bottomRows(k - 1 - i) = state.protos.coords.bottomRows(k - 1 - i);
      state.protos.coords = std::move(coords);
      state.net.remove_output_unit(i);
      state.opt_theta.remove_head_row(i);
      state.opt_protos.remove_row(i);
      survivor_usage.erase(survivor_usage.begin() + i);
    }
  }

  // Addition pass over survivors.
  const int n_survivors = static_cast<int>(survivor_usage.size());
  const double sigma = state.sigma_eff;
  for (int i = 0; i < n_survivors; ++i) {
    if (state.protos.k() >= cfg.k_max) break;
    if (survivor_usage[static_cast<std::size_t>(i)] < delta_add) continue;
    bool placed = false;
    for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
      Eigen::VectorXd p = state.protos.coords.row(i).transpose();
      for (int a = 0; a < state.protos.dim(); ++a)
        p[a] += rng.normal(0.0, sigma);
      p = state.protos.box.clamp(p);
      bool distinct = true;
      for (int j = 0; j < state.protos.k() && distinct; ++j)
        if ((state.protos.coords.row(j).transpose() - p).norm() < 1e-10)
          distinct = false;
      if (!distinct) continue;
      const int k = state.protos.k();
      state.protos.coords.conservativeResize(k + 1, Eigen::NoChange);
      state.protos.coords.row(k) = p.transpose();
      state.net.add_output_unit(i);
      state.opt_theta.add_head_row();
      state.opt_protos.add_row();
      placed = true;
    }
    // Coincident jitter after 10 resamples: skip this add.
  }

  resolve_duplicates(state.protos, rng);
  state.areas = voronoi_areas(state.protos);
}

TrainState fit(const Dataset& train, const TrainConfig& cfg) {
  train.validate();
  if (cfg.epochs < 0 || cfg.batch < 1)
    throw ConfigError("fit: epochs must be >= 0 and batch >= 1");
  if (cfg.dynamics.enabled && cfg.dynamics.k_min < 2)
    throw ConfigError("fit: k_min must be >= 2");
  const int d = train.target_dim();
  Rng rng(cfg.seed);

  TrainState state;
  state.protos.box = compute_bounding_box(train.targets, cfg.padding);
  state.protos =
      init_prototypes(cfg, state.protos.box, train.targets, rng);
  resolve_duplicates(state.protos, rng);

  // Feature standardization from training statistics.
  const int p = static_cast<int>(train.features.cols());
  state.feat_mean = train.features.colwise().mean();
  state.feat_std.resize(p);
  for (int j = 0; j < p; ++j) {
    double var = (train.features.col(j).array() - state.feat_mean[j])
                     .square()
                     .mean();
    state.feat_std[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  state.target_std.resize(d);
  for (int j = 0; j < d; ++j) {
    double mu = train.targets.col(j).mean();
    state.target_std[j] =
        std::sqrt((train.targets.col(j).array() - mu).square().mean());
    if (!(state.target_std[j] > 0)) state.target_std[j] = 1.0;
  }

  // tau is configured in normalized target units; scale into raw units by the
  // geometric mean of the per-dimension stds.
  double scale = 1.0;
  for (int j = 0; j < d; ++j) scale *= state.target_std[j];
  scale = std::pow(scale, 1.0 / d);
  state.tau_eff = cfg.loss.tau * scale;
  const int k_init = state.protos.k();
  state.delta_rep_eff =
      cfg.loss.delta_rep > 0
          ? cfg.loss.delta_rep
          : 0.5 * std::pow(state.protos.box.volume() / k_init, 1.0 / d);
  state.sigma_eff =
      cfg.dynamics.sigma > 0 ? cfg.dynamics.sigma : 0.25 * state.delta_rep_eff;

  state.net = DensityNetwork::create(p, cfg.hidden, k_init, rng);
  state.opt_theta = AdamState::for_network(state.net);
  state.opt_protos.init(k_init, d);
  state.areas = voronoi_areas(state.protos);
  state.k_trajectory.push_back(k_init);

  const Eigen::MatrixXd x_std = state.standardize(train.features);
  const Eigen::Index n = train.n();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    double epoch_loss = 0.0;
    long n_batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch, n - start);
      const int k = state.protos.k();
      Eigen::MatrixXd xb(bsz, p), yb(bsz, d);
      for (Eigen::Index b = 0; b < bsz; ++b) {
        xb.row(b) = x_std.row(idx[static_cast<std::size_t>(start + b)]);
        yb.row(b) = train.targets.row(idx[static_cast<std::size_t>(start + b)]);
      }
      ForwardCache cache;
      Eigen::MatrixXd logits = state.net.forward_batch(xb, &cache);
      Eigen::VectorXd log_areas = state.areas.array().log().matrix();
      Eigen::MatrixXd d_logits(bsz, k);
      Eigen::MatrixXd proto_grad;
      if (cfg.learn_protos) proto_grad = Eigen::MatrixXd::Zero(k, d);
      double loss = 0.0;
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (Eigen::Index b = 0; b < bsz; ++b) {
        Eigen::VectorXd y = yb.row(b).transpose();
        Eigen::VectorXd q = soft_labels(y, state.protos, state.tau_eff);
        Eigen::VectorXd lg = logits.row(b).transpose();
        Eigen::VectorXd probs = probs_from_logits(lg, log_areas);
        loss += inv_b * loss_cross_entropy(q, lg, log_areas);
        d_logits.row(b) = inv_b * (probs - q).transpose();
        if (cfg.learn_protos) {
          Eigen::MatrixXd gq = Eigen::MatrixXd::Zero(k, d);
          loss += inv_b * cfg.loss.lambda_q *
                  loss_quantization(y, state.protos.coords, &gq);
          proto_grad += (inv_b * cfg.loss.lambda_q) * gq;
        }
      }
      if (cfg.learn_protos && cfg.loss.lambda_rep > 0 && k >= 2) {
        Eigen::MatrixXd gr = Eigen::MatrixXd::Zero(k, d);
        loss += cfg.loss.lambda_rep *
                loss_repulsion(state.protos.coords, state.delta_rep_eff, &gr);
        proto_grad += cfg.loss.lambda_rep * gr;
      }
      if (!std::isfinite(loss))
        throw NumericError("fit: non-finite loss at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(start / cfg.batch));
      Gradients grads = state.net.backward(cache, d_logits);
      apply_gradients(state.net, grads, state.opt_theta, cfg.lr_theta);
      if (cfg.learn_protos) {
        ++state.proto_step;
        state.opt_protos.update(state.protos.coords, proto_grad,
                                cfg.lr_protos, state.proto_step);
        for (int i = 0; i < k; ++i)
          state.protos.coords.row(i) =
              state.protos.box.clamp(state.protos.coords.row(i).transpose())
                  .transpose();
      }
      epoch_loss += loss;
      ++n_batches;
    }
    state.epoch = epoch + 1;
    state.epoch_loss.push_back(epoch_loss / std::max(1L, n_batches));
    if (cfg.learn_protos) {
      resolve_duplicates(state.protos, rng);
      state.areas = voronoi_areas(state.protos);
    }
    if (cfg.dynamics.enabled)
      add_remove_prototypes(state, cfg.dynamics, train.targets, state.tau_eff,
                            rng);
    state.k_trajectory.push_back(state.protos.k());
  }
  return state;
}

}  // namespace chdqr
