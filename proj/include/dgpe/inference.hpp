#pragma once

#include <cstdint>
#include <vector>

#include "dgpe/model.hpp"

namespace dgpe {

/// All random draws consumed by one ELBO evaluation, frozen so that the
/// estimator is a deterministic function of the parameters (common random
/// numbers for gradients and finite-difference checks).
struct NoiseBundle {
  std::vector<int> batch;      // data indices, unique, within [0, n_S)
  std::vector<MatrixXd> eps;   // eps[t] is n_layers x b of standard normals
  VectorXd alpha_std;          // T standard normals driving the E-term alpha
  VectorXd alpha_kl_std;       // S standard normals for the layer-KL expectation
  std::uint64_t seed = 0;

  int T() const { return static_cast<int>(eps.size()); }
  int S() const { return static_cast<int>(alpha_kl_std.size()); }
};

NoiseBundle draw_noise(std::vector<int> batch, int n_layers, int T, int S,
                       std::uint64_t seed);

struct ElboEstimate {
  double value = 0.0;
  int n_mc = 1;                // T
  std::vector<int> batch_indices;
  std::uint64_t rng_seed = 0;
};

/// Deterministic ELBO estimate under the frozen noise bundle. n_total is n_S
/// (the minibatch term is scaled by n_total / |batch|).
double elbo_value(const DgpModel& model, const MatrixXd& X, const VectorXd& y,
                  const NoiseBundle& nb, int n_total);

/// Convenience wrapper drawing fresh noise from rng.
ElboEstimate elbo_minibatch(const DgpModel& model, const MatrixXd& X,
                            const VectorXd& y, const std::vector<int>& batch,
                            int T, int S, std::uint64_t seed);

/// Monte Carlo estimate of E_i = E[ log P(y_i | f_N(x_i)) ] for one point.
double expected_log_lik(const VectorXd& x_i, double y_i, const DgpModel& model,
                        int T, Rng& rng);

/// Gradient of the ELBO estimator with respect to every trainable parameter,
/// in natural (untransformed) space.
struct LayerGrad {
  MatrixXd Z;
  VectorXd m_vec;
  MatrixXd s_factor;  // lower triangle populated
  VectorXd delta_Z;   // empty on layer 1
  double sigma2 = 0.0;
  double lambda = 0.0;
  MatrixXd s_mat;     // dL/ds as a symmetric matrix (natural-gradient input)
};

struct ModelGrad {
  std::vector<LayerGrad> layers;
  double noise_var = 0.0;
  double m_alpha = 0.0;      // estimated mode
  double s_alpha = 0.0;      // estimated mode
  double alpha_value = 0.0;  // optimized mode
  double value = 0.0;        // ELBO value from the same pass
};

ModelGrad elbo_gradient(const DgpModel& model, const MatrixXd& X,
                        const VectorXd& y, const NoiseBundle& nb, int n_total);

/// d/d m_alpha and d/d s_alpha of -KL(q(alpha) || P(alpha)).
void kl_alpha_gradient(const AlphaPosterior& a, double& d_m, double& d_s);

}  // namespace dgpe
