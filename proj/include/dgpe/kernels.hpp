#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "dgpe/errors.hpp"

namespace dgpe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Stationary Matern correlation spec. Smoothness is restricted to the
/// half-integer values with closed-form (Bessel-free) expressions.
struct MaternSpec {
  double nu = 2.5;       // in {0.5, 1.5, 2.5}
  double lambda = 1.0;   // length scale, > 0
  double sigma2 = 1.0;   // marginal variance, > 0

  void validate() const {
    if (nu != 0.5 && nu != 1.5 && nu != 2.5) {
      throw DomainError("MaternSpec: nu must be one of {0.5, 1.5, 2.5}");
    }
    if (!(lambda > 0.0)) throw DomainError("MaternSpec: lambda must be > 0");
    if (!(sigma2 > 0.0)) throw DomainError("MaternSpec: sigma2 must be > 0");
  }
};

/// Non-stationary covariance driven by the length-scale function
/// H(f) = exp(alpha * f) applied to the previous layer's values.
struct NonStatKernel {
  MaternSpec base;
  double alpha = 1.0;  // >= 0; smoothness control
  int dim = 1;         // input dimension d

  void validate() const {
    base.validate();
    if (alpha < 0.0) throw DomainError("NonStatKernel: alpha must be >= 0");
    if (dim < 1) throw DomainError("NonStatKernel: dim must be >= 1");
  }
};

// log H is clamped to this window before exponentiation.
inline constexpr double kLogHClamp = 40.0;

/// H(f) = exp(alpha * f), with the exponent clamped to [-40, 40].
inline double length_scale(double f, double alpha) {
  const double t = std::clamp(alpha * f, -kLogHClamp, kLogHClamp);
  return std::exp(t);
}

/// Matern correlation rho(r / lambda) for half-integer nu.
double matern_corr(double r, const MaternSpec& spec);

/// Correlation and its derivative at the already-scaled argument t = r/lambda.
void matern_rho(double t, double nu, double& rho, double& drho_dt);

/// Stationary covariance sigma^2 * rho(||x - x'|| / lambda).
double stat_cov(const VectorXd& x, const VectorXd& xp, const MaternSpec& spec);

/// Non-stationary covariance between inputs x, x' whose previous-layer values
/// are f, f'. Paciorek construction with the isotropic kernel matrix
/// Sigma(x) = H(f(x))^{-1} I_d, so H acts as a local inverse squared length
/// scale (alpha = 0 gives the stationary kernel exactly; growing alpha kills
/// the correlation):
///   sigma^2 * 2^{d/2} (H H')^{d/4} / (H + H')^{d/2}
///          * rho( ||x - x'|| * sqrt(2 H H' / (H + H')) / lambda ).
double nonstat_cov(const VectorXd& x, const VectorXd& xp, double f, double fp,
                   const NonStatKernel& k);

/// Covariance value plus the partial derivatives the reverse pass needs.
/// la/lb are the clamped log length-scale values log H.
struct PairCovGrad {
  double k = 0.0;
  double dk_dr = 0.0;       // at r > 0; 0 at r == 0
  double dk_dla = 0.0;      // d k / d log H_a (0 where the clamp is active)
  double dk_dlb = 0.0;
  double dk_dsigma2 = 0.0;
  double dk_dlambda = 0.0;
};

/// Non-stationary covariance from distance r and log length-scales (la, lb).
double nonstat_cov_logh(double r, double la, double lb, int dim,
                        const MaternSpec& spec);
PairCovGrad nonstat_cov_logh_grad(double r, double la, double lb, int dim,
                                  const MaternSpec& spec);

/// Stationary covariance from distance r with the same gradient payload
/// (the log-H slots stay zero).
double stat_cov_r(double r, const MaternSpec& spec);
PairCovGrad stat_cov_r_grad(double r, const MaternSpec& spec);

/// Cross-gram k(Xa_i, Xb_j) under the stationary kernel.
MatrixXd gram(const MatrixXd& Xa, const MatrixXd& Xb, const MaternSpec& k);

/// Cross-gram under the non-stationary kernel; fa/fb hold the previous-layer
/// values at the rows of Xa/Xb.
MatrixXd gram(const MatrixXd& Xa, const MatrixXd& Xb, const VectorXd& fa,
              const VectorXd& fb, const NonStatKernel& k);

/// Symmetric self-grams (exactly symmetric by construction).
MatrixXd gram_self(const MatrixXd& X, const MaternSpec& k);
MatrixXd gram_self(const MatrixXd& X, const VectorXd& f, const NonStatKernel& k);

}  // namespace dgpe
