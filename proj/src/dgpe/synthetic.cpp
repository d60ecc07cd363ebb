#include "dgpe/synthetic.hpp"

#include "dgpe/linalg.hpp"

namespace dgpe {

double step1d(double x) {
  if (x < 0.0 || x > 1.0) throw DomainError("step1d: x must be in [0,1]");
  return (x > 0.3 && x < 0.7) ? 1.0 : 0.0;
}

double piecewise2d(double x1, double x2) {
  if (x1 < 0.0 || x1 > 1.0 || x2 < 0.0 || x2 > 1.0) {
    throw DomainError("piecewise2d: inputs must be in [0,1]");
  }
  if (x1 >= 0.66 && x1 <= 0.91 && x2 >= 0.4 && x2 <= 0.91) return 1.3;
  if (x1 >= 0.1 && x1 <= 0.5 && x2 >= 0.6 && x2 <= 0.92) return 2.2;
  if (x1 >= 0.15 && x1 <= 0.6 && x2 >= 0.1 && x2 <= 0.52) return 3.5;
  return 0.0;
}

MatrixXd grid_design(int points_per_dim, int d) {
  if (points_per_dim < 2) throw DomainError("grid_design: need k >= 2");
  if (d < 1) throw DomainError("grid_design: need d >= 1");
  Eigen::Index rows = 1;
  for (int j = 0; j < d; ++j) rows *= points_per_dim;
  MatrixXd X(rows, d);
  for (Eigen::Index i = 0; i < rows; ++i) {
    Eigen::Index rem = i;
    for (int j = d - 1; j >= 0; --j) {
      const Eigen::Index idx = rem % points_per_dim;
      rem /= points_per_dim;
      X(i, j) = static_cast<double>(idx) / (points_per_dim - 1);
    }
  }
  return X;
}

VectorXd dgp_prior_realization(int n_layers, const VectorXd& grid, double alpha,
                               double lambda, Rng& rng) {
  const Eigen::Index n = grid.size();
  if (n < 3) throw DomainError("dgp_prior_realization: grid too small");
  if (n_layers < 2) throw DomainError("dgp_prior_realization: need >= 2 layers");
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw DomainError("dgp_prior_realization: grid must be sorted");
    }
  }
  MatrixXd X(n, 1);
  X.col(0) = grid;

  MaternSpec base{2.5, lambda, 1.0};
  MaternSpec deep{2.5, 1.0, 1.0};
  NonStatKernel nk{deep, alpha, 1};

  auto draw = [&](const MatrixXd& K) {
    const CholeskyResult ch = cholesky_psd(K, 1e-8);
    VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
    return VectorXd(ch.L.triangularView<Eigen::Lower>() * z);
  };

  VectorXd f = draw(gram_self(X, base));
  for (int layer = 2; layer <= n_layers - 1; ++layer) {
    f = draw(gram_self(X, f, nk));
  }
  return f;
}

double smoothness_score(const VectorXd& path, const VectorXd& grid) {
  const Eigen::Index n = path.size();
  if (n < 3 || grid.size() != n) {
    throw DomainError("smoothness_score: need n >= 3 matching lengths");
  }
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw DomainError("smoothness_score: grid must be strictly increasing");
    }
  }
  const double h = (grid[n - 1] - grid[0]) / static_cast<double>(n - 1);
  double acc = 0.0;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    acc += std::abs(path[i - 1] - 2.0 * path[i] + path[i + 1]);
  }
  return acc / (h * h);
}

}  // namespace dgpe
