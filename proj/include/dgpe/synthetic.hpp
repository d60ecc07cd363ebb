#pragma once

#include "dgpe/kernels.hpp"
#include "dgpe/rng.hpp"

namespace dgpe {

/// Step model 1_{(0.3, 0.7)}(x); open interval at the boundaries.
double step1d(double x);

/// 2-d piecewise model with three rectangular plateaus on the unit square:
/// 1.3 on [0.66,0.91]x[0.4,0.91], 2.2 on [0.1,0.5]x[0.6,0.92],
/// 3.5 on [0.15,0.6]x[0.1,0.52], 0 elsewhere.
double piecewise2d(double x1, double x2);

/// Equispaced lattice on [0,1]^d with k points per axis (endpoints included),
/// k^d rows in row-major order (last coordinate fastest).
MatrixXd grid_design(int points_per_dim, int d);

/// One prior realization of an n_layers-layer hierarchy on a sorted 1-d grid:
/// the base layer is a stationary Matern(nu=2.5, lambda) draw, every deeper
/// layer is a full-covariance draw from the non-stationary kernel driven by
/// the previous layer (unit length scale, sigma2 = 1). Returns the
/// (n_layers - 1)-th drawn layer, the one that parameterizes the output GP.
VectorXd dgp_prior_realization(int n_layers, const VectorXd& grid, double alpha,
                               double lambda, Rng& rng);

/// Sum over interior grid points of |f_{i-1} - 2 f_i + f_{i+1}| / h^2
/// (uniform-grid central second difference).
double smoothness_score(const VectorXd& path, const VectorXd& grid);

}  // namespace dgpe
