#pragma once

#include <cstdint>
#include <vector>

#include "dgpe/inference.hpp"
#include "dgpe/model.hpp"

namespace dgpe {

// Kernel hyperparameters and variances live at kHyperFloor + softplus(theta)
// so extreme optimizer excursions cannot drive them to exact zero.
inline constexpr double kHyperFloor = 1e-8;

// Stable softplus and friends (positivity transforms for hyperparameters).
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double softplus_inv(double p) {
  if (!(p > 0.0)) throw DomainError("softplus_inv: argument must be > 0");
  return p > 30.0 ? p : std::log(std::expm1(p));
}
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

struct AdamHyper {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  VectorXd m;
  VectorXd v;
  long step = 0;
};

/// Standard Adam descent update with bias correction.
void adam_step(VectorXd& params, const VectorXd& grad, AdamState& state,
               const AdamHyper& hyper);

/// Natural-gradient ascent step on Gaussian variational parameters (m, s) of
/// one layer, performed in natural-parameter space:
///   theta1 = s^-1 m        <- theta1 + gamma * (dL/dm - 2 (dL/ds) m)
///   theta2 = -1/2 s^-1     <- theta2 + gamma * dL/ds
/// dL_dm / dL_ds are ELBO-ascent gradients; dL_ds uses the symmetric
/// full-matrix convention. The step is halved (up to 10 times) whenever the
/// updated s fails to stay positive definite; StepFailed if that never
/// succeeds.
void natgrad_step(LayerState& layer, const VectorXd& dL_dm,
                  const MatrixXd& dL_ds, double gamma);

/// k-means++ seeding plus a few Lloyd sweeps; rows of the result are centers.
MatrixXd kmeans_pp(const MatrixXd& X, int k, Rng& rng, int lloyd_iters = 10);

/// Flat unconstrained parameter vector <-> model mapping. Hyperparameters go
/// through softplus, s_factor diagonals through log, everything else is raw.
struct PackOptions {
  bool include_last_layer_variational = true;  // false while natgrad owns them
  bool include_noise = true;
};

class ParamPacker {
 public:
  ParamPacker(const DgpModel& model, PackOptions opt = {});
  Eigen::Index size() const { return size_; }
  VectorXd pack(const DgpModel& model) const;
  void unpack(const VectorXd& theta, DgpModel& model) const;
  /// Chain natural-space gradients into the unconstrained space.
  VectorXd pack_grad(const DgpModel& model, const ModelGrad& grad) const;

 private:
  PackOptions opt_;
  int n_layers_;
  std::vector<Eigen::Index> m_;  // inducing count per layer
  int input_dim_;
  AlphaMode mode_;
  Eigen::Index size_;
};

struct TrainConfig {
  int n_iters = 2000;
  int batch_size = 0;  // 0 or >= n_S means full batch
  AdamHyper adam;
  double nat_grad_step = 0.1;          // gamma after warm-up
  double nat_grad_warmup_start = 0.01;
  int nat_grad_warmup_iters = 100;
  int T = 1;  // MC samples per ELBO evaluation
  int S = 1;  // alpha draws for the layer-KL expectation
  std::uint64_t seed = 1;

  AlphaMode alpha_mode = AlphaMode::estimated;
  double alpha_init_m = 3.0;
  double alpha_init_s = 1.0;
  double alpha_prior_mean = 3.5;
  double alpha_prior_var = 1.0;
  double alpha_value = 1.0;  // fixed value / optimized-mode init

  int n_layers = 2;
  int n_inducing = 50;
  double nu = 2.5;
  double sigma2_init = 1.0;
  double lambda_init = 0.5;
  double noise_init = 1e-2;
  bool learn_noise = true;
  bool standardize_y = true;

  int eval_every = 50;

  void validate(Eigen::Index n_data) const;
};

struct TraceRow {
  int iteration;
  double elbo;
  double seconds;   // wall-clock since training start
  double m_alpha;   // alpha posterior mean (or scalar alpha)
  double s_alpha;   // alpha posterior variance (0 for scalar modes)
};

struct TrainTrace {
  std::vector<TraceRow> rows;
};

/// Builds the initialized model (k-means++ inducing inputs, zero variational
/// means, 1e-2 I factors, delta = 0) without running any optimization.
DgpModel init_model(const MatrixXd& X, const VectorXd& y,
                    const TrainConfig& cfg);

/// Runs the alternating natural-gradient / Adam loop. The trace is filled in
/// place (preserved if an error propagates). Deterministic at fixed seed.
DgpModel train(const MatrixXd& X, const VectorXd& y, const TrainConfig& cfg,
               TrainTrace& trace);

/// Same loop, warm-started from an already initialized model (the config's
/// init fields are ignored; y is standardized with the model's transform).
DgpModel train_from(DgpModel model, const MatrixXd& X, const VectorXd& y,
                    const TrainConfig& cfg, TrainTrace& trace);

std::string trace_csv(const TrainTrace& trace);

}  // namespace dgpe
