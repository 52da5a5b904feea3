#include "chdqr/quantizer.hpp"

#include <cmath>

#include "chdqr/error.hpp"

namespace chdqr {

int hard_assign(const Eigen::VectorXd& y, const PrototypeSet& protos) {
  return nearest_prototype(protos.coords, y);
}

double quantization_error(const Eigen::VectorXd& y,
                          const PrototypeSet& protos) {
  int i = hard_assign(y, protos);
  return (protos.coords.row(i).transpose() - y).norm();
}

Eigen::VectorXd soft_labels(const Eigen::VectorXd& y,
                            const PrototypeSet& protos, double tau) {
  if (!(tau > 0)) throw ConfigError("soft_labels: tau must be > 0");
  const int k = protos.k();
  Eigen::VectorXd logits(k);
  for (int i = 0; i < k; ++i)
    logits[i] = -(protos.coords.row(i).transpose() - y).norm() / tau;
  double m = logits.maxCoeff();
  Eigen::VectorXd q = (logits.array() - m).exp();
  q /= q.sum();
  return q;
}

Eigen::VectorXd usage(const PrototypeSet& protos,
                      const Eigen::MatrixXd& targets, double tau) {
  const auto n = targets.rows();
  if (n == 0) throw DataError("usage: empty target list");
  const int k = protos.k();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd comp = Eigen::VectorXd::Zero(k);  // Kahan residuals
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::VectorXd q = soft_labels(targets.row(t).transpose(), protos, tau);
    for (int i = 0; i < k; ++i) {
      double yk = q[i] - comp[i];
      double s = sum[i] + yk;
      comp[i] = (s - sum[i]) - yk;
      sum[i] = s;
    }
  }
  return sum / static_cast<double>(n);
}

}  // namespace chdqr
