#pragma once

#include <Eigen/Dense>

#include "chdqr/geometry.hpp"

namespace chdqr {

// Nearest-prototype assignment; ties resolved toward the lowest index.
int hard_assign(const Eigen::VectorXd& y, const PrototypeSet& protos);

// Euclidean distance from y to its hard-assigned prototype.
double quantization_error(const Eigen::VectorXd& y, const PrototypeSet& protos);

// Temperature-softmax label over prototypes from distances to y,
// computed with max-subtraction. Entries sum to 1.
Eigen::VectorXd soft_labels(const Eigen::VectorXd& y,
                            const PrototypeSet& protos, double tau);

// Mean soft label over the target set (normalized prototype usage).
// Compensated summation keeps the result independent of target order.
Eigen::VectorXd usage(const PrototypeSet& protos,
                      const Eigen::MatrixXd& targets, double tau);

}  // namespace chdqr
