#pragma once

#include <Eigen/Dense>

#include "dgpe/errors.hpp"

namespace dgpe {

using Eigen::VectorXd;

/// Mean squared prediction error (1/p) sum (pred - truth)^2.
double mspe(const VectorXd& pred_mean, const VectorXd& truth);

/// Nash-Sutcliffe efficiency 1 - MSPE / Var(truth), population variance.
/// DomainError when the truth is constant.
double nse(const VectorXd& pred_mean, const VectorXd& truth);

/// Fraction of truths inside [lower, upper], endpoints inclusive.
double coverage(const VectorXd& lower, const VectorXd& upper,
                const VectorXd& truth);

}  // namespace dgpe
