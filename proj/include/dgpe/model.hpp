#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "dgpe/kernels.hpp"
#include "dgpe/linalg.hpp"
#include "dgpe/rng.hpp"

namespace dgpe {

inline constexpr double kVarFloor = 1e-12;
inline constexpr double kNoiseFloor = 1e-6;
inline constexpr double kJitter = 1e-8;

/// Per-layer inducing and variational state. Layer 1 carries no delta_Z
/// (its kernel is stationary); deeper layers evaluate the length-scale
/// function at delta_Z on the inducing inputs.
struct LayerState {
  MatrixXd Z;         // m x d inducing inputs
  VectorXd m_vec;     // m, variational mean of q(u)
  MatrixXd s_factor;  // m x m lower-triangular factor, s = s_factor s_factor^T
  VectorXd delta_Z;   // m, empty on layer 1
  MaternSpec kernel;

  Eigen::Index n_inducing() const { return Z.rows(); }
  MatrixXd s_mat() const {
    return s_factor * s_factor.transpose();
  }
};

enum class AlphaMode { estimated, optimized, fixed };

std::string alpha_mode_name(AlphaMode mode);
AlphaMode alpha_mode_from_name(const std::string& name);

/// Gaussian variational posterior q(alpha) = N(m_alpha, s_alpha) with its
/// prior P(alpha) = N(prior_mean, prior_var).
struct AlphaPosterior {
  double m_alpha = 3.0;
  double s_alpha = 1.0;
  double prior_mean = 3.5;
  double prior_var = 1.0;
};

/// Records the affine map applied to each input column on ingestion so that
/// prediction inputs can be pushed through the same map.
struct InputScaling {
  std::vector<std::string> names;
  VectorXd mins;
  VectorXd maxs;
  bool empty() const { return mins.size() == 0; }
};

struct DgpModel {
  int input_dim = 1;
  int n_layers = 1;
  std::vector<LayerState> layers;
  AlphaMode alpha_mode = AlphaMode::estimated;
  AlphaPosterior alpha;      // used in estimated mode
  double alpha_value = 1.0;  // used in fixed / optimized modes
  double noise_var = 1e-2;

  // Output transform: training standardizes y, prediction undoes it.
  double y_mean = 0.0;
  double y_scale = 1.0;

  InputScaling scaling;

  void validate() const;
  /// Effective alpha used when a scalar is required (fixed/optimized modes).
  double alpha_scalar() const { return alpha_value; }
};

/// Factorized per-layer state for a fixed (parameters, alpha) pair.
struct LayerSolve {
  MatrixXd L;          // chol(Kzz + j I)
  MatrixXd Kzz;        // jittered gram over inducing inputs
  VectorXd log_h_z;    // nonstat layers: clamp(alpha * delta_Z)
  double applied_jitter = 0.0;
};

LayerSolve factor_layer1(const LayerState& layer, double jitter = kJitter);
LayerSolve factor_layern(const LayerState& layer, double alpha,
                         double jitter = kJitter);

/// Marginalized conditional q(f | m, s) at a batch of points, plus the
/// intermediates the gradient pass reuses.
struct CondWork {
  MatrixXd Kzx;      // m x b cross covariances
  MatrixXd B;        // m x b, Kzz^{-1} Kzx
  VectorXd mean;     // b
  VectorXd var;      // b, floored at kVarFloor
  VectorXd var_raw;  // b, pre-floor values
};

void conditional_stat(const LayerSolve& fac, const LayerState& layer,
                      const MatrixXd& Xb, CondWork& out);
void conditional_nonstat(const LayerSolve& fac, const LayerState& layer,
                         double alpha, const MatrixXd& Xb,
                         const VectorXd& f_prev, CondWork& out);

/// Spec-level wrappers returning (mean, var_diag).
std::pair<VectorXd, VectorXd> layer1_conditional(const MatrixXd& x_batch,
                                                 const LayerState& layer);
std::pair<VectorXd, VectorXd> layern_conditional(const MatrixXd& x_batch,
                                                 const VectorXd& f_prev,
                                                 const LayerState& layer,
                                                 double alpha);

/// Reparameterized draw: mean + eps .* sqrt(var).
VectorXd sample_layer(const VectorXd& mean, const VectorXd& var_diag,
                      const VectorXd& eps);

struct ForwardResult {
  VectorXd f;         // final-layer values at the batch
  double alpha_draw;  // alpha used for this pass
};

/// One joint draw through all layers using a single alpha draw.
/// Consumes from rng: one normal for alpha (estimated mode only), then one
/// normal per (layer, point) in layer-major order.
ForwardResult forward_sample(const MatrixXd& x_batch, const DgpModel& model,
                             Rng& rng);

}  // namespace dgpe
