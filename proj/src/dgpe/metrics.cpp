#include "dgpe/metrics.hpp"

namespace dgpe {

double mspe(const VectorXd& pred_mean, const VectorXd& truth) {
  if (pred_mean.size() != truth.size() || pred_mean.size() < 1) {
    throw DomainError("mspe: length mismatch or empty input");
  }
  return (pred_mean - truth).squaredNorm() / static_cast<double>(truth.size());
}

double nse(const VectorXd& pred_mean, const VectorXd& truth) {
  const double err = mspe(pred_mean, truth);
  const double mu = truth.mean();
  const double var =
      (truth.array() - mu).square().sum() / static_cast<double>(truth.size());
  if (!(var > 0.0)) throw DomainError("nse: truth is constant");
  return 1.0 - err / var;
}

double coverage(const VectorXd& lower, const VectorXd& upper,
                const VectorXd& truth) {
  const Eigen::Index p = truth.size();
  if (lower.size() != p || upper.size() != p || p < 1) {
    throw DomainError("coverage: length mismatch or empty input");
  }
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (lower[i] <= truth[i] && truth[i] <= upper[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(p);
}

}  // namespace dgpe
