#include "chdqr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chdqr/error.hpp"
#include "chdqr/rng.hpp"

namespace chdqr {

GridPrototypes build_grid(const GridSpec& spec) {
  if (spec.bins_per_dim < 2) throw ConfigError("build_grid: bins_per_dim < 2");
  spec.box.validate();
  const int d = spec.box.dim();
  const int bins = spec.bins_per_dim;
  const int k = d == 1 ? bins : bins * bins;
  GridPrototypes grid;
  grid.protos.box = spec.box;
  grid.protos.coords.resize(k, d);
  Eigen::VectorXd step = (spec.box.upper - spec.box.lower) / bins;
  if (d == 1) {
    for (int i = 0; i < bins; ++i)
      grid.protos.coords(i, 0) = spec.box.lower[0] + (i + 0.5) * step[0];
  } else {
    int row = 0;
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j, ++row) {
        grid.protos.coords(row, 0) = spec.box.lower[0] + (i + 0.5) * step[0];
        grid.protos.coords(row, 1) = spec.box.lower[1] + (j + 0.5) * step[1];
      }
  }
  grid.areas =
      Eigen::VectorXd::Constant(k, spec.box.volume() / static_cast<double>(k));
  return grid;
}

double pinball_loss(double pred, double y, double level) {
  if (!(level > 0 && level < 1))
    throw ConfigError("pinball_loss: level must be in (0, 1)");
  double diff = y - pred;
  return diff >= 0 ? level * diff : (level - 1.0) * diff;
}

Eigen::MatrixXd CqrModel::raw_bounds(const Eigen::VectorXd& x) const {
  Eigen::VectorXd xs =
      (x - feat_mean).array() / feat_std.array();
  Eigen::VectorXd out = net.forward(xs);
  Eigen::MatrixXd bounds(target_dim, 2);
  for (int j = 0; j < target_dim; ++j) {
    bounds(j, 0) = out[2 * j];
    bounds(j, 1) = out[2 * j + 1];
  }
  return bounds;
}

Eigen::MatrixXd CqrModel::intervals(const Eigen::VectorXd& x) {
  if (corrections.size() != target_dim)
    throw ConfigError("CqrModel: calibrate before predicting");
  Eigen::MatrixXd bounds = raw_bounds(x);
  for (int j = 0; j < target_dim; ++j) {
    bounds(j, 0) -= corrections[j];
    bounds(j, 1) += corrections[j];
    if (bounds(j, 0) > bounds(j, 1)) {
      double mid = 0.5 * (bounds(j, 0) + bounds(j, 1));
      bounds(j, 0) = bounds(j, 1) = mid;
      ++crossings_seen;
    }
  }
  return bounds;
}

bool CqrModel::covers(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  Eigen::MatrixXd iv = intervals(x);
  for (int j = 0; j < target_dim; ++j)
    if (y[j] < iv(j, 0) || y[j] > iv(j, 1)) return false;
  return true;
}

double CqrModel::region_volume(const Eigen::VectorXd& x) {
  Eigen::MatrixXd iv = intervals(x);
  double v = 1.0;
  for (int j = 0; j < target_dim; ++j) v *= iv(j, 1) - iv(j, 0);
  return v;
}

CqrModel cqr_fit(const Dataset& train, const CqrConfig& cfg) {
  train.validate();
  if (!(cfg.alpha > 0 && cfg.alpha < 1))
    throw ConfigError("cqr_fit: alpha must be in (0, 1)");
  const int d = train.target_dim();
  const int p = static_cast<int>(train.features.cols());
  Rng rng(cfg.seed);
  CqrModel model;
  model.alpha = cfg.alpha;
  model.target_dim = d;
  model.feat_mean = train.features.colwise().mean();
  model.feat_std.resize(p);
  for (int j = 0; j < p; ++j) {
    double var = (train.features.col(j).array() - model.feat_mean[j])
                     .square()
                     .mean();
    model.feat_std[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  model.net = DensityNetwork::create(p, cfg.hidden, 2 * d, rng);
  AdamState opt = AdamState::for_network(model.net);

  const double lo_level = cfg.alpha / 2.0;
  const double hi_level = 1.0 - cfg.alpha / 2.0;
  Eigen::MatrixXd x_std = train.features.rowwise() - model.feat_mean.transpose();
  x_std.array().rowwise() /= model.feat_std.transpose().array();
  const Eigen::Index n = train.n();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(idx);
    for (Eigen::Index start = 0; start < n; start += cfg.batch) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch, n - start);
      Eigen::MatrixXd xb(bsz, p), yb(bsz, d);
      for (Eigen::Index b = 0; b < bsz; ++b) {
        xb.row(b) = x_std.row(idx[static_cast<std::size_t>(start + b)]);
        yb.row(b) = train.targets.row(idx[static_cast<std::size_t>(start + b)]);
      }
      ForwardCache cache;
      Eigen::MatrixXd preds = model.net.forward_batch(xb, &cache);
      Eigen::MatrixXd d_preds(bsz, 2 * d);
      const double inv_b = 1.0 / static_cast<double>(bsz);
      for (Eigen::Index b = 0; b < bsz; ++b)
        for (int j = 0; j < d; ++j) {
          double y = yb(b, j);
          // d pinball / d pred = -level when y >= pred, else 1 - level.
          d_preds(b, 2 * j) =
              inv_b * (y >= preds(b, 2 * j) ? -lo_level : 1.0 - lo_level);
          d_preds(b, 2 * j + 1) =
              inv_b * (y >= preds(b, 2 * j + 1) ? -hi_level : 1.0 - hi_level);
        }
      Gradients grads = model.net.backward(cache, d_preds);
      apply_gradients(model.net, grads, opt, cfg.lr);
    }
  }
  // Track raw lower > upper violations on the training set.
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::MatrixXd bounds = model.raw_bounds(train.features.row(i).transpose());
    for (int j = 0; j < d; ++j)
      if (bounds(j, 0) > bounds(j, 1)) ++model.train_crossings;
  }
  return model;
}

void cqr_calibrate(CqrModel& model, const Dataset& cal) {
  if (cal.n() == 0) throw DataError("cqr_calibrate: empty calibration split");
  const int d = model.target_dim;
  const Eigen::Index n = cal.n();
  model.corrections.resize(d);
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (int j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::MatrixXd bounds =
          model.raw_bounds(cal.features.row(i).transpose());
      scores[static_cast<std::size_t>(i)] =
          std::max(bounds(j, 0) - cal.targets(i, j),
                   cal.targets(i, j) - bounds(j, 1));
    }
    std::sort(scores.begin(), scores.end());
    long idx = static_cast<long>(
        std::ceil((n + 1) * (1.0 - model.alpha) - 1e-12));
    model.corrections[j] =
        idx > n ? std::numeric_limits<double>::infinity()
                : scores[static_cast<std::size_t>(idx - 1)];
  }
}

}  // namespace chdqr
