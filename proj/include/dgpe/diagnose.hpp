#pragma once

#include <string>

#include "dgpe/model.hpp"

namespace dgpe {

/// Stationarity screening: fit a depth-2 hierarchy (one stationary hidden
/// layer driving the output layer's length-scale field, alpha fixed at 1) and
/// look at how much the hidden layer actually varies across the design. A
/// nearly constant hidden layer means a constant length-scale field, i.e. a
/// stationary GP would do.
struct DiagnoseReport {
  VectorXd f1_mean;        // layer-1 conditional means at the design points
  double sigma_f1 = 0.0;   // their standard deviation (standardized-y scale)
  double range_m1 = 0.0;   // max - min of the layer-1 variational mean
  double ratio = 0.0;      // sigma_f1 / range_m1
  double threshold = 0.05;
  bool degenerate = false; // constant response; no flag decision
  bool stationary_adequate = false;

  std::string to_text() const;
};

struct DiagnoseOptions {
  double threshold = 0.05;
  std::uint64_t seed = 1;
  int n_inducing = 20;
  int n_iters = 800;
  int refine_iters = 300;  // low-lr polish so optimizer jitter settles
};

DiagnoseReport diagnose_stationarity(const MatrixXd& X, const VectorXd& y,
                                     const DiagnoseOptions& opt = {});

}  // namespace dgpe
