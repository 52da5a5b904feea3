#pragma once

#include <Eigen/Dense>
#include <vector>

#include "chdqr/density_model.hpp"
#include "chdqr/geometry.hpp"

namespace chdqr {

// Region indices sorted by predicted log-density, densest first; ties broken
// by ascending prototype index.
std::vector<int> density_order(const Eigen::VectorXd& log_density);

// Cumulative probability of the density-ranked prefix that first includes
// region_of_y. Always in (0, 1].
double nonconformity_score(const RegionProbabilities& rp, int region_of_y);

// Convenience wrapper; a target outside the bounding box scores 1.0 and the
// event is counted in *outside_box when provided.
double nonconformity_score(const DensityNetwork& net,
                           const PrototypeSet& protos,
                           const Eigen::VectorXd& areas,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                           long* outside_box = nullptr);

struct CalibrationResult {
  std::vector<double> scores;  // sorted ascending
  double q_hat = 1.0;
  double alpha = 0.1;
  int n_cal = 0;
};

// q_hat is the ceil((n+1)(1-alpha))-th smallest score, saturating at 1.0
// when that index exceeds n.
CalibrationResult calibrate_from_scores(std::vector<double> scores,
                                        double alpha);

CalibrationResult calibrate(const DensityNetwork& net,
                            const PrototypeSet& protos,
                            const Eigen::VectorXd& areas,
                            const Eigen::MatrixXd& cal_x,
                            const Eigen::MatrixXd& cal_y, double alpha);

struct PredictionRegion {
  std::vector<int> region_indices;  // density-ordered prefix
  double cumulative_prob = 0.0;
  double total_area = 0.0;
};

// Largest density-ordered prefix whose cumulative probability stays <= q_hat.
// Membership duality: y is in the region exactly when its nonconformity
// score is <= q_hat.
PredictionRegion predict_region(const RegionProbabilities& rp,
                                const Eigen::VectorXd& areas, double q_hat);

}  // namespace chdqr
