#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace chdqr {

struct Dataset {
  Eigen::MatrixXd features;  // N x p
  Eigen::MatrixXd targets;   // N x d, d in {1, 2}
  std::string name;
  nlohmann::json provenance;

  Eigen::Index n() const { return targets.rows(); }
  int target_dim() const { return static_cast<int>(targets.cols()); }
  void validate() const;  // finite entries, N >= 10, row counts equal
};

// Bimodal 1D mixture 0.5 N(0.75, 0.05) + 0.5 N(-0.75, 0.05); the second
// parameter is a variance by default (std ~ 0.2236). Features are a single
// constant-zero column.
Dataset gen_uncond1d(int n, std::uint64_t seed, bool second_param_is_std = false);

// Equal-weight 3-component 2D Gaussian mixture with means (0,0), (3,3),
// (-3,-4). When component_labels is non-null the mixture component of each
// row is recorded (test instrumentation).
Dataset gen_uncond2d(int n, std::uint64_t seed,
                     std::vector<int>* component_labels = nullptr);

// Appends n_per_component draws from each of two far-off unit-covariance
// Gaussians at (8,-8) and (-8,8), then reshuffles rows.
Dataset add_outliers(const Dataset& base, int n_per_component,
                     std::uint64_t seed);

// CSV ingestion: header row required; target_columns name the target columns,
// everything else becomes a feature. Malformed rows are reported with line
// numbers.
Dataset load_csv(const std::string& path,
                 const std::vector<std::string>& target_columns);

void save_csv(const Dataset& ds, const std::string& path);

struct Splits {
  Dataset train, cal, test;
};

// Seeded 80/10/10 permutation split: floor(0.8 N) / floor(0.1 N) / remainder.
Splits split(const Dataset& ds, std::uint64_t seed);

}  // namespace chdqr
