#include "dgpe/linalg.hpp"

#include <Eigen/Cholesky>
#include <cmath>

namespace dgpe {

namespace {

// LLT with explicit positive-pivot check; Eigen's Success flag alone lets
// marginal pivots through.
bool try_llt(const MatrixXd& M, MatrixXd& L) {
  Eigen::LLT<MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) return false;
  L = llt.matrixL();
  return (L.diagonal().array() > 0.0).all();
}

}  // namespace

CholeskyResult cholesky_psd(const MatrixXd& M, double jitter) {
  if (M.rows() != M.cols()) {
    throw DomainError("cholesky_psd: matrix must be square");
  }
  if (jitter < 0.0) {
    throw DomainError("cholesky_psd: jitter must be non-negative");
  }
  const double scale = M.cwiseAbs().maxCoeff();
  const double asym = (M - M.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * (1.0 + scale)) {
    throw DomainError("cholesky_psd: matrix is not symmetric");
  }

  const Eigen::Index n = M.rows();
  MatrixXd L(n, n);
  if (try_llt(M, L)) return {L, 0.0};
  for (double j = jitter; j <= 1e6 * jitter && j > 0.0; j *= 10.0) {
    MatrixXd Mj = M;
    Mj.diagonal().array() += j;
    if (try_llt(Mj, L)) return {L, j};
  }
  throw FactorizationFailed("cholesky_psd: jitter ladder exhausted");
}

SpdMatrix::SpdMatrix(MatrixXd entries, double jitter)
    : mat_(std::move(entries)), jitter_(jitter) {
  if (mat_.rows() != mat_.cols() || mat_.rows() < 1) {
    throw DomainError("SpdMatrix: square non-empty matrix required");
  }
}

const CholeskyResult& SpdMatrix::chol() const {
  if (!chol_) chol_ = cholesky_psd(mat_, jitter_);
  return *chol_;
}

VectorXd SpdMatrix::solve(const VectorXd& b) const {
  const MatrixXd& L = chol().L;
  VectorXd x = L.triangularView<Eigen::Lower>().solve(b);
  L.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

MatrixXd SpdMatrix::solve(const MatrixXd& B) const {
  const MatrixXd& L = chol().L;
  MatrixXd X = L.triangularView<Eigen::Lower>().solve(B);
  L.triangularView<Eigen::Lower>().transpose().solveInPlace(X);
  return X;
}

double SpdMatrix::log_det() const {
  return 2.0 * chol().L.diagonal().array().log().sum();
}

double kl_mvn_vs_zero_mean(const VectorXd& m, const SpdMatrix& s,
                           const SpdMatrix& K) {
  const Eigen::Index n = m.size();
  if (s.dim() != n || K.dim() != n) {
    throw DomainError("kl_mvn_vs_zero_mean: dimension mismatch");
  }
  const MatrixXd& Lk = K.chol().L;
  const MatrixXd& Ls = s.chol().L;
  // tr(K^-1 s) = || Lk^-1 Ls ||_F^2
  const MatrixXd A = Lk.triangularView<Eigen::Lower>().solve(Ls);
  const VectorXd w = Lk.triangularView<Eigen::Lower>().solve(m);
  const double value = 0.5 * (A.squaredNorm() + w.squaredNorm() -
                              static_cast<double>(n) + K.log_det() -
                              s.log_det());
  return std::max(value, 0.0);
}

double kl_univariate_normal(double m_q, double s_q, double m_p, double s_p) {
  if (s_q <= 0.0 || s_p <= 0.0) {
    throw DomainError("kl_univariate_normal: variances must be positive");
  }
  const double d = m_q - m_p;
  const double value = 0.5 * (s_q / s_p + d * d / s_p - 1.0 + std::log(s_p / s_q));
  return std::max(value, 0.0);
}

}  // namespace dgpe
