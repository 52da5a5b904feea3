#pragma once

#include <Eigen/Dense>
#include <vector>

#include "chdqr/data.hpp"
#include "chdqr/density_model.hpp"
#include "chdqr/geometry.hpp"

namespace chdqr {

struct GridSpec {
  int bins_per_dim = 50;
  BoundingBox box;
};

struct GridPrototypes {
  PrototypeSet protos;
  Eigen::VectorXd areas;  // uniform, box volume / bins^d
};

// Cell centers of a uniform bins^d lattice over the box.
GridPrototypes build_grid(const GridSpec& spec);

// level * (y - pred) when y >= pred, (level - 1) * (y - pred) otherwise.
double pinball_loss(double pred, double y, double level);

struct CqrConfig {
  int epochs = 200;
  int batch = 256;
  double lr = 1e-3;
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 0;
  double alpha = 0.1;  // quantile levels alpha/2 and 1 - alpha/2 per dimension
};

// Per-dimension quantile network: 2d outputs ordered
// (lo_0, hi_0, lo_1, hi_1, ...). Split-conformal correction per dimension at
// level 1 - alpha, prediction region = cross-product of intervals.
struct CqrModel {
  DensityNetwork net;  // reused as a plain MLP
  Eigen::VectorXd feat_mean, feat_std;
  double alpha = 0.1;
  int target_dim = 1;
  Eigen::VectorXd corrections;   // one per target dimension; set by calibrate
  long crossings_seen = 0;       // lower > upper after correction
  long train_crossings = 0;      // raw lower > upper violations on train set

  Eigen::MatrixXd raw_bounds(const Eigen::VectorXd& x) const;  // d x 2 (lo, hi)
  // Corrected intervals; crossed intervals are clamped to zero width at the
  // midpoint and counted.
  Eigen::MatrixXd intervals(const Eigen::VectorXd& x);
  bool covers(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
  double region_volume(const Eigen::VectorXd& x);  // product of widths
};

CqrModel cqr_fit(const Dataset& train, const CqrConfig& cfg);
void cqr_calibrate(CqrModel& model, const Dataset& cal);

}  // namespace chdqr
