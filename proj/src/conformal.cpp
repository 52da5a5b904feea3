#include "chdqr/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chdqr/error.hpp"
#include "chdqr/quantizer.hpp"

namespace chdqr {

std::vector<int> density_order(const Eigen::VectorXd& log_density) {
  std::vector<int> order(log_density.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return log_density[a] > log_density[b];
  });
  return order;
}

double nonconformity_score(const RegionProbabilities& rp, int region_of_y) {
  if (region_of_y < 0 || region_of_y >= rp.probs.size())
    throw ConfigError("nonconformity_score: region index out of range");
  auto order = density_order(rp.log_density);
  double cum = 0.0;
  for (int idx : order) {
    cum += rp.probs[idx];
    if (idx == region_of_y) return std::min(cum, 1.0);
  }
  return 1.0;  // unreachable
}

double nonconformity_score(const DensityNetwork& net,
                           const PrototypeSet& protos,
                           const Eigen::VectorXd& areas,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                           long* outside_box) {
  if (!protos.box.contains(y)) {
    if (outside_box) ++*outside_box;
    return 1.0;
  }
  RegionProbabilities rp = region_probabilities(net, x, areas);
  return nonconformity_score(rp, hard_assign(y, protos));
}

CalibrationResult calibrate_from_scores(std::vector<double> scores,
                                        double alpha) {
  if (scores.empty()) throw DataError("calibrate: empty calibration split");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("calibrate: alpha must be in (0, 1)");
  std::sort(scores.begin(), scores.end());
  CalibrationResult r;
  r.alpha = alpha;
  r.n_cal = static_cast<int>(scores.size());
  long idx = static_cast<long>(
      std::ceil((r.n_cal + 1) * (1.0 - alpha) - 1e-12));
  r.q_hat = idx > r.n_cal ? 1.0 : scores[static_cast<std::size_t>(idx - 1)];
  r.scores = std::move(scores);
  return r;
}

CalibrationResult calibrate(const DensityNetwork& net,
                            const PrototypeSet& protos,
                            const Eigen::VectorXd& areas,
                            const Eigen::MatrixXd& cal_x,
                            const Eigen::MatrixXd& cal_y, double alpha) {
  if (cal_x.rows() == 0) throw DataError("calibrate: empty calibration split");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(cal_x.rows()));
  for (Eigen::Index i = 0; i < cal_x.rows(); ++i)
    scores.push_back(nonconformity_score(net, protos, areas,
                                         cal_x.row(i).transpose(),
                                         cal_y.row(i).transpose()));
  return calibrate_from_scores(std::move(scores), alpha);
}

PredictionRegion predict_region(const RegionProbabilities& rp,
                                const Eigen::VectorXd& areas, double q_hat) {
  if (!(q_hat >= 0.0 && q_hat <= 1.0))
    throw ConfigError("predict_region: q_hat must be in [0, 1]");
  PredictionRegion region;
  auto order = density_order(rp.log_density);
  double cum = 0.0;
  for (int idx : order) {
    double next = cum + rp.probs[idx];
    // The floating-point cumulative sum can land a hair above 1 on the last
    // region; treat q_hat = 1 as all-inclusive.
    if (next > q_hat && !(q_hat >= 1.0 && next <= 1.0 + 1e-9)) break;
    cum = next;
    region.region_indices.push_back(idx);
    region.total_area += areas[idx];
  }
  region.cumulative_prob = cum;
  return region;
}

}  // namespace chdqr
