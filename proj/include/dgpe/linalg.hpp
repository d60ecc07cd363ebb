#pragma once

#include <Eigen/Dense>
#include <optional>

#include "dgpe/errors.hpp"

namespace dgpe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CholeskyResult {
  MatrixXd L;              // lower triangular, L * L^T = M + applied_jitter * I
  double applied_jitter;   // smallest rung of the ladder that succeeded
};

/// Factor a symmetric matrix, escalating the diagonal jitter through the
/// ladder {0, jitter, 10*jitter, ..., 1e6*jitter} until the factorization
/// succeeds with strictly positive pivots.
/// Throws DomainError if M is not symmetric, FactorizationFailed if the
/// ladder is exhausted.
CholeskyResult cholesky_psd(const MatrixXd& M, double jitter);

/// Dense symmetric positive (semi-)definite matrix with a cached factor.
class SpdMatrix {
 public:
  explicit SpdMatrix(MatrixXd entries, double jitter = 1e-8);

  Eigen::Index dim() const { return mat_.rows(); }
  const MatrixXd& dense() const { return mat_; }
  const CholeskyResult& chol() const;

  /// Solves A x = b through the cached factor.
  VectorXd solve(const VectorXd& b) const;
  MatrixXd solve(const MatrixXd& B) const;

  double log_det() const;

 private:
  MatrixXd mat_;
  double jitter_;
  mutable std::optional<CholeskyResult> chol_;
};

/// KL( N(m, s) || N(0, K) )
///   = 1/2 [ tr(K^-1 s) + m^T K^-1 m - dim + log det K - log det s ].
/// Clamped at zero against rounding; the analytic value is non-negative.
double kl_mvn_vs_zero_mean(const VectorXd& m, const SpdMatrix& s,
                           const SpdMatrix& K);

/// KL( N(m_q, s_q) || N(m_p, s_p) ) for scalar variances.
double kl_univariate_normal(double m_q, double s_q, double m_p, double s_p);

/// Gaussian log density log N(y | mean, var).
inline double gaussian_log_pdf(double y, double mean, double var) {
  const double r = y - mean;
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * r * r / var;
}

}  // namespace dgpe
