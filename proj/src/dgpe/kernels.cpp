#include "dgpe/kernels.hpp"

namespace dgpe {

namespace {

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

inline void check_dims(const VectorXd& x, const VectorXd& xp) {
  if (x.size() != xp.size()) {
    throw DomainError("kernel: input dimension mismatch");
  }
}

// log((e^la + e^lb) / 2), stable for large |la|, |lb|.
inline double log_mean_exp2(double la, double lb) {
  const double hi = std::max(la, lb);
  const double lo = std::min(la, lb);
  return hi + std::log1p(std::exp(lo - hi)) - M_LN2;
}

}  // namespace

void matern_rho(double t, double nu, double& rho, double& drho_dt) {
  if (nu == 0.5) {
    const double e = std::exp(-t);
    rho = e;
    drho_dt = -e;
  } else if (nu == 1.5) {
    const double e = std::exp(-kSqrt3 * t);
    rho = (1.0 + kSqrt3 * t) * e;
    drho_dt = -3.0 * t * e;
  } else if (nu == 2.5) {
    const double e = std::exp(-kSqrt5 * t);
    rho = (1.0 + kSqrt5 * t + (5.0 / 3.0) * t * t) * e;
    drho_dt = -(5.0 / 3.0) * t * (1.0 + kSqrt5 * t) * e;
  } else {
    throw DomainError("matern_rho: nu must be one of {0.5, 1.5, 2.5}");
  }
}

double matern_corr(double r, const MaternSpec& spec) {
  spec.validate();
  if (r < 0.0) throw DomainError("matern_corr: r must be >= 0");
  double rho = 0.0, d = 0.0;
  matern_rho(r / spec.lambda, spec.nu, rho, d);
  return rho;
}

double stat_cov_r(double r, const MaternSpec& spec) {
  double rho = 0.0, d = 0.0;
  matern_rho(r / spec.lambda, spec.nu, rho, d);
  return spec.sigma2 * rho;
}

PairCovGrad stat_cov_r_grad(double r, const MaternSpec& spec) {
  const double t = r / spec.lambda;
  double rho = 0.0, drho = 0.0;
  matern_rho(t, spec.nu, rho, drho);
  PairCovGrad g;
  g.k = spec.sigma2 * rho;
  g.dk_dsigma2 = rho;
  g.dk_dr = spec.sigma2 * drho / spec.lambda;
  g.dk_dlambda = -spec.sigma2 * drho * t / spec.lambda;
  return g;
}

double stat_cov(const VectorXd& x, const VectorXd& xp, const MaternSpec& spec) {
  spec.validate();
  check_dims(x, xp);
  return stat_cov_r((x - xp).norm(), spec);
}

double nonstat_cov_logh(double r, double la, double lb, int dim,
                        const MaternSpec& spec) {
  const double lnM = log_mean_exp2(la, lb);
  const double lnP = 0.25 * dim * (la + lb) - 0.5 * dim * lnM;
  // sqrt(Q) = r * sqrt(2 H H' / (H + H')); log of that root is lnT.
  const double lnT = 0.5 * (la + lb - lnM);
  const double t = r / spec.lambda * std::exp(lnT);
  double rho = 0.0, d = 0.0;
  matern_rho(t, spec.nu, rho, d);
  return spec.sigma2 * std::exp(lnP) * rho;
}

PairCovGrad nonstat_cov_logh_grad(double r, double la, double lb, int dim,
                                  const MaternSpec& spec) {
  const double lnM = log_mean_exp2(la, lb);
  // Weights e^la / (2M), e^lb / (2M); they sum to one.
  const double wa = std::exp(la - lnM - M_LN2);
  const double wb = 1.0 - wa;
  const double lnP = 0.25 * dim * (la + lb) - 0.5 * dim * lnM;
  const double P = std::exp(lnP);
  const double scaled = std::exp(0.5 * (la + lb - lnM)) / spec.lambda;
  const double t = r * scaled;
  double rho = 0.0, drho = 0.0;
  matern_rho(t, spec.nu, rho, drho);

  PairCovGrad g;
  g.k = spec.sigma2 * P * rho;
  g.dk_dsigma2 = P * rho;
  g.dk_dr = spec.sigma2 * P * drho * scaled;
  g.dk_dlambda = -spec.sigma2 * P * drho * t / spec.lambda;
  const double sPd = spec.sigma2 * P * drho;
  g.dk_dla =
      g.k * (0.25 * dim - 0.5 * dim * wa) + sPd * t * 0.5 * (1.0 - wa);
  g.dk_dlb =
      g.k * (0.25 * dim - 0.5 * dim * wb) + sPd * t * 0.5 * (1.0 - wb);
  return g;
}

double nonstat_cov(const VectorXd& x, const VectorXd& xp, double f, double fp,
                   const NonStatKernel& k) {
  k.validate();
  check_dims(x, xp);
  if (x.size() != k.dim) {
    throw DomainError("nonstat_cov: input dimension does not match kernel dim");
  }
  const double la = std::clamp(k.alpha * f, -kLogHClamp, kLogHClamp);
  const double lb = std::clamp(k.alpha * fp, -kLogHClamp, kLogHClamp);
  return nonstat_cov_logh((x - xp).norm(), la, lb, k.dim, k.base);
}

MatrixXd gram(const MatrixXd& Xa, const MatrixXd& Xb, const MaternSpec& k) {
  k.validate();
  if (Xa.cols() != Xb.cols()) throw DomainError("gram: column dims differ");
  MatrixXd G(Xa.rows(), Xb.rows());
  for (Eigen::Index i = 0; i < Xa.rows(); ++i) {
    for (Eigen::Index j = 0; j < Xb.rows(); ++j) {
      G(i, j) = stat_cov_r((Xa.row(i) - Xb.row(j)).norm(), k);
    }
  }
  return G;
}

MatrixXd gram(const MatrixXd& Xa, const MatrixXd& Xb, const VectorXd& fa,
              const VectorXd& fb, const NonStatKernel& k) {
  k.validate();
  if (Xa.cols() != Xb.cols()) throw DomainError("gram: column dims differ");
  if (fa.size() != Xa.rows() || fb.size() != Xb.rows()) {
    throw DomainError("gram: f-vector length must match row count");
  }
  MatrixXd G(Xa.rows(), Xb.rows());
  for (Eigen::Index i = 0; i < Xa.rows(); ++i) {
    const double la = std::clamp(k.alpha * fa[i], -kLogHClamp, kLogHClamp);
    for (Eigen::Index j = 0; j < Xb.rows(); ++j) {
      const double lb = std::clamp(k.alpha * fb[j], -kLogHClamp, kLogHClamp);
      G(i, j) = nonstat_cov_logh((Xa.row(i) - Xb.row(j)).norm(), la, lb,
                                 static_cast<int>(Xa.cols()), k.base);
    }
  }
  return G;
}

MatrixXd gram_self(const MatrixXd& X, const MaternSpec& k) {
  k.validate();
  const Eigen::Index n = X.rows();
  MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    G(i, i) = k.sigma2;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = stat_cov_r((X.row(i) - X.row(j)).norm(), k);
      G(i, j) = v;
      G(j, i) = v;
    }
  }
  return G;
}

MatrixXd gram_self(const MatrixXd& X, const VectorXd& f, const NonStatKernel& k) {
  k.validate();
  if (f.size() != X.rows()) {
    throw DomainError("gram_self: f-vector length must match row count");
  }
  const Eigen::Index n = X.rows();
  const int d = static_cast<int>(X.cols());
  VectorXd lh(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lh[i] = std::clamp(k.alpha * f[i], -kLogHClamp, kLogHClamp);
  }
  MatrixXd G(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    G(i, i) = k.base.sigma2;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = nonstat_cov_logh((X.row(i) - X.row(j)).norm(), lh[i],
                                        lh[j], d, k.base);
      G(i, j) = v;
      G(j, i) = v;
    }
  }
  return G;
}

}  // namespace dgpe
