#pragma once

#include <cstdint>

#include "dgpe/model.hpp"

namespace dgpe {

struct PredictiveSummary {
  VectorXd mean;
  VectorXd variance;   // unbiased (R-1 divisor)
  VectorXd lower95;
  VectorXd upper95;
  MatrixXd samples;    // R x p when retained, else 0 x 0
};

/// R recursive posterior-predictive draws at the rows of x_star. Each
/// replicate r uses its own alpha draw and an independent stream derived from
/// (seed, r), so the result is reproducible and thread-schedule independent.
/// Samples are returned on the original output scale; include_noise adds
/// N(0, noise_var) observation noise to each draw.
MatrixXd predict_samples(const MatrixXd& x_star, const DgpModel& model, int R,
                         std::uint64_t seed, int threads = 1,
                         bool include_noise = false);

/// Per-column mean, unbiased variance and equal-tailed empirical interval at
/// the given level (quantiles by linear interpolation).
PredictiveSummary summarize(const MatrixXd& samples, double level = 0.95,
                            bool keep_samples = false);

/// Linearly-interpolated empirical quantile of a sample vector.
double empirical_quantile(VectorXd values, double q);

}  // namespace dgpe
