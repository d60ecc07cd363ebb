#include "dgpe/inference.hpp"

#include <cmath>

namespace dgpe {

namespace {

// Lower-triangular inverse of a matrix (used for s^-1 via the factor).
MatrixXd tri_inverse_lower(const MatrixXd& L) {
  const Eigen::Index m = L.rows();
  return L.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(m, m));
}

// K^-1 from its Cholesky factor.
MatrixXd spd_inverse(const MatrixXd& L) {
  MatrixXd Linv = tri_inverse_lower(L);
  return Linv.transpose() * Linv;
}

MatrixXd chol_solve(const MatrixXd& L, const MatrixXd& B) {
  MatrixXd X = L.triangularView<Eigen::Lower>().solve(B);
  L.triangularView<Eigen::Lower>().transpose().solveInPlace(X);
  return X;
}

VectorXd chol_solve(const MatrixXd& L, const VectorXd& b) {
  VectorXd x = L.triangularView<Eigen::Lower>().solve(b);
  L.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

double log_det_from_chol(const MatrixXd& L) {
  return 2.0 * L.diagonal().array().log().sum();
}

// KL( N(m, S_L S_L^T) || N(0, K) ) from the two factors.
double kl_from_factors(const VectorXd& m_vec, const MatrixXd& s_factor,
                       const MatrixXd& L) {
  const MatrixXd A = L.triangularView<Eigen::Lower>().solve(s_factor);
  const VectorXd w = L.triangularView<Eigen::Lower>().solve(m_vec);
  const double logdet_s =
      2.0 * s_factor.diagonal().array().abs().log().sum();
  return 0.5 * (A.squaredNorm() + w.squaredNorm() -
                static_cast<double>(m_vec.size()) + log_det_from_chol(L) -
                logdet_s);
}

struct AlphaGradAccum {
  double d_alpha_scalar = 0.0;  // optimized mode
  double d_m_alpha = 0.0;
  double d_s_alpha = 0.0;
};

// Chain one d/d(alpha draw) adjoint back to the variational parameters:
// alpha = m_alpha + sqrt(s_alpha) * z.
void chain_alpha_draw(const DgpModel& model, double alpha_bar, double z,
                      AlphaGradAccum& acc) {
  if (model.alpha_mode == AlphaMode::estimated) {
    acc.d_m_alpha += alpha_bar;
    acc.d_s_alpha += alpha_bar * z * 0.5 / std::sqrt(model.alpha.s_alpha);
  } else if (model.alpha_mode == AlphaMode::optimized) {
    acc.d_alpha_scalar += alpha_bar;
  }
}

// --- entrywise pullbacks --------------------------------------------------

void pullback_kzz_stat(const LayerState& ly, const MatrixXd& Kbar,
                       LayerGrad& g) {
  const Eigen::Index m = ly.Z.rows();
  for (Eigen::Index i = 0; i < m; ++i) {
    g.sigma2 += Kbar(i, i);  // diag entries equal sigma2
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double kb = Kbar(i, j) + Kbar(j, i);
      if (kb == 0.0) continue;
      const VectorXd diff = ly.Z.row(i) - ly.Z.row(j);
      const double r = diff.norm();
      const PairCovGrad pg = stat_cov_r_grad(r, ly.kernel);
      g.sigma2 += kb * pg.dk_dsigma2;
      g.lambda += kb * pg.dk_dlambda;
      if (r > 0.0) {
        const VectorXd dr = diff / r;
        g.Z.row(i) += kb * pg.dk_dr * dr.transpose();
        g.Z.row(j) -= kb * pg.dk_dr * dr.transpose();
      }
    }
  }
}

void pullback_kzz_nonstat(const LayerState& ly, const LayerSolve& fac,
                          double alpha, const MatrixXd& Kbar, LayerGrad& g,
                          double& alpha_bar) {
  const Eigen::Index m = ly.Z.rows();
  const int d = static_cast<int>(ly.Z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    g.sigma2 += Kbar(i, i);  // diag entries equal sigma2
    const bool in_i = std::abs(alpha * ly.delta_Z[i]) < kLogHClamp;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double kb = Kbar(i, j) + Kbar(j, i);
      if (kb == 0.0) continue;
      const VectorXd diff = ly.Z.row(i) - ly.Z.row(j);
      const double r = diff.norm();
      const PairCovGrad pg =
          nonstat_cov_logh_grad(r, fac.log_h_z[i], fac.log_h_z[j], d, ly.kernel);
      g.sigma2 += kb * pg.dk_dsigma2;
      g.lambda += kb * pg.dk_dlambda;
      if (r > 0.0) {
        const VectorXd dr = diff / r;
        g.Z.row(i) += kb * pg.dk_dr * dr.transpose();
        g.Z.row(j) -= kb * pg.dk_dr * dr.transpose();
      }
      const bool in_j = std::abs(alpha * ly.delta_Z[j]) < kLogHClamp;
      if (in_i) {
        g.delta_Z[i] += kb * pg.dk_dla * alpha;
        alpha_bar += kb * pg.dk_dla * ly.delta_Z[i];
      }
      if (in_j) {
        g.delta_Z[j] += kb * pg.dk_dlb * alpha;
        alpha_bar += kb * pg.dk_dlb * ly.delta_Z[j];
      }
    }
  }
}

void pullback_kzx_stat(const LayerState& ly, const MatrixXd& Xb,
                       const MatrixXd& Kzx_bar, LayerGrad& g) {
  const Eigen::Index m = ly.Z.rows();
  const Eigen::Index b = Xb.rows();
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < b; ++i) {
      const double kb = Kzx_bar(j, i);
      if (kb == 0.0) continue;
      const VectorXd diff = ly.Z.row(j) - Xb.row(i);
      const double r = diff.norm();
      const PairCovGrad pg = stat_cov_r_grad(r, ly.kernel);
      g.sigma2 += kb * pg.dk_dsigma2;
      g.lambda += kb * pg.dk_dlambda;
      if (r > 0.0) {
        g.Z.row(j) += kb * pg.dk_dr / r * diff.transpose();
      }
    }
  }
}

void pullback_kzx_nonstat(const LayerState& ly, const LayerSolve& fac,
                          double alpha, const MatrixXd& Xb,
                          const VectorXd& f_prev, const MatrixXd& Kzx_bar,
                          LayerGrad& g, double& alpha_bar,
                          VectorXd& f_prev_bar) {
  const Eigen::Index m = ly.Z.rows();
  const Eigen::Index b = Xb.rows();
  const int d = static_cast<int>(Xb.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const double lx = std::clamp(alpha * f_prev[i], -kLogHClamp, kLogHClamp);
    const bool in_x = std::abs(alpha * f_prev[i]) < kLogHClamp;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double kb = Kzx_bar(j, i);
      if (kb == 0.0) continue;
      const VectorXd diff = ly.Z.row(j) - Xb.row(i);
      const double r = diff.norm();
      const PairCovGrad pg =
          nonstat_cov_logh_grad(r, fac.log_h_z[j], lx, d, ly.kernel);
      g.sigma2 += kb * pg.dk_dsigma2;
      g.lambda += kb * pg.dk_dlambda;
      if (r > 0.0) {
        g.Z.row(j) += kb * pg.dk_dr / r * diff.transpose();
      }
      if (std::abs(alpha * ly.delta_Z[j]) < kLogHClamp) {
        g.delta_Z[j] += kb * pg.dk_dla * alpha;
        alpha_bar += kb * pg.dk_dla * ly.delta_Z[j];
      }
      if (in_x) {
        f_prev_bar[i] += kb * pg.dk_dlb * alpha;
        alpha_bar += kb * pg.dk_dlb * f_prev[i];
      }
    }
  }
}

// Adjoint buffers for one layer's conditional, flushed once per owner.
struct CondAdj {
  VectorXd mu_bar;   // b
  VectorXd var_bar;  // b (already masked by the floor)
  void init(Eigen::Index b) {
    mu_bar = VectorXd::Zero(b);
    var_bar = VectorXd::Zero(b);
  }
};

// Backward of (mean, var) through the conditional's linear algebra. Returns
// Kzx_bar and K_bar for the kernel pullbacks and accumulates m/s grads.
void backprop_conditional(const LayerState& ly, const LayerSolve& fac,
                          const CondWork& w, const CondAdj& adj, LayerGrad& g,
                          MatrixXd& Kzx_bar, MatrixXd& K_bar) {
  g.m_vec.noalias() += w.B * adj.mu_bar;
  MatrixXd B_bar = ly.m_vec * adj.mu_bar.transpose();

  // var_i = sigma2 - c_i . b_i + b_i^T s b_i
  g.sigma2 += adj.var_bar.sum();
  Kzx_bar = -w.B * adj.var_bar.asDiagonal();
  B_bar.noalias() -= w.Kzx * adj.var_bar.asDiagonal();
  const MatrixXd sB =
      ly.s_factor * (ly.s_factor.transpose() * w.B);  // s * B
  B_bar.noalias() += 2.0 * sB * adj.var_bar.asDiagonal();
  g.s_mat.noalias() +=
      w.B * adj.var_bar.asDiagonal() * w.B.transpose();

  // B = K^-1 Kzx
  const MatrixXd G = chol_solve(fac.L, B_bar);
  Kzx_bar.noalias() += G;
  K_bar = -G * w.B.transpose();
}

// ELBO gradient contribution of -w * KL(q(u) || P(u; K)).
void backprop_kl(const LayerState& ly, const MatrixXd& L, double weight,
                 LayerGrad& g, MatrixXd& K_bar) {
  const MatrixXd Kinv = spd_inverse(L);
  const MatrixXd SLinv = tri_inverse_lower(ly.s_factor);
  const MatrixXd s_inv = SLinv.transpose() * SLinv;
  const VectorXd gvec = chol_solve(L, ly.m_vec);

  g.m_vec.noalias() -= weight * gvec;
  g.s_mat.noalias() -= weight * 0.5 * (Kinv - s_inv);

  const MatrixXd KinvS = Kinv * ly.s_mat();
  K_bar = -weight * 0.5 *
          (Kinv - KinvS * Kinv - gvec * gvec.transpose());
}

}  // namespace

NoiseBundle draw_noise(std::vector<int> batch, int n_layers, int T, int S,
                       std::uint64_t seed) {
  if (batch.empty()) throw DomainError("draw_noise: batch must be non-empty");
  if (T < 1) throw DomainError("draw_noise: T must be >= 1");
  if (S < 0) throw DomainError("draw_noise: S must be >= 0");
  NoiseBundle nb;
  nb.batch = std::move(batch);
  nb.seed = seed;
  Rng rng(seed);
  const Eigen::Index b = static_cast<Eigen::Index>(nb.batch.size());
  nb.eps.resize(T);
  for (int t = 0; t < T; ++t) {
    nb.eps[t].resize(n_layers, b);
    for (int n = 0; n < n_layers; ++n) {
      for (Eigen::Index i = 0; i < b; ++i) nb.eps[t](n, i) = rng.normal();
    }
  }
  nb.alpha_std.resize(T);
  for (int t = 0; t < T; ++t) nb.alpha_std[t] = rng.normal();
  nb.alpha_kl_std.resize(S);
  for (int s = 0; s < S; ++s) nb.alpha_kl_std[s] = rng.normal();
  return nb;
}

void kl_alpha_gradient(const AlphaPosterior& a, double& d_m, double& d_s) {
  d_m = -(a.m_alpha - a.prior_mean) / a.prior_var;
  d_s = -0.5 * (1.0 / a.prior_var - 1.0 / a.s_alpha);
}

namespace {

struct DeepStash {
  LayerSolve fac;
  CondWork w;
};

// Shared forward/backward pass. When grad is null only the value is computed.
double elbo_pass(const DgpModel& model, const MatrixXd& X, const VectorXd& y,
                 const NoiseBundle& nb, int n_total, ModelGrad* grad) {
  model.validate();
  const int N = model.n_layers;
  const int T = nb.T();
  const bool estimated = model.alpha_mode == AlphaMode::estimated;
  const int S = estimated ? nb.S() : 0;
  if (estimated && nb.S() < 1 && N > 1) {
    throw DomainError("elbo: estimated mode needs at least one alpha KL draw");
  }
  const Eigen::Index b = static_cast<Eigen::Index>(nb.batch.size());
  if (b == 0) throw DomainError("elbo: batch must be non-empty");
  for (int idx : nb.batch) {
    if (idx < 0 || idx >= n_total || idx >= X.rows()) {
      throw DomainError("elbo: batch index out of range");
    }
  }

  MatrixXd Xb(b, X.cols());
  VectorXd yb(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    Xb.row(i) = X.row(nb.batch[i]);
    yb[i] = y[nb.batch[i]];
  }

  // alpha draws for the E-term
  VectorXd alphas(T);
  for (int t = 0; t < T; ++t) {
    alphas[t] = estimated ? model.alpha.m_alpha +
                                std::sqrt(model.alpha.s_alpha) * nb.alpha_std[t]
                          : model.alpha_value;
  }

  // Layer 1 conditional is alpha-free and shared across MC samples.
  const LayerSolve fac1 = factor_layer1(model.layers[0]);
  CondWork w1;
  conditional_stat(fac1, model.layers[0], Xb, w1);

  const double v = model.noise_var;
  const double w_ll =
      static_cast<double>(n_total) / (static_cast<double>(b) * T);

  // Per-t stashes (gradient path only).
  std::vector<std::vector<DeepStash>> stash;   // [t][n-1] for n >= 1
  std::vector<std::vector<VectorXd>> f_stash;  // [t][n]
  if (grad) {
    stash.resize(T);
    f_stash.resize(T);
  }

  double ll_sum = 0.0;
  std::vector<VectorXd> f_final(grad ? T : 0);
  for (int t = 0; t < T; ++t) {
    VectorXd f = sample_layer(w1.mean, w1.var,
                              nb.eps[t].row(0).transpose());
    if (grad) f_stash[t].push_back(f);
    for (int n = 1; n < N; ++n) {
      DeepStash ds;
      ds.fac = factor_layern(model.layers[n], alphas[t]);
      conditional_nonstat(ds.fac, model.layers[n], alphas[t], Xb, f, ds.w);
      f = sample_layer(ds.w.mean, ds.w.var, nb.eps[t].row(n).transpose());
      if (grad) {
        stash[t].push_back(std::move(ds));
        f_stash[t].push_back(f);
      }
    }
    for (Eigen::Index i = 0; i < b; ++i) {
      ll_sum += gaussian_log_pdf(yb[i], f[i], v);
    }
    if (grad) f_final[t] = f;
  }
  const double e_term = w_ll * ll_sum;

  // KL terms.
  const double kl1 = kl_from_factors(model.layers[0].m_vec,
                                     model.layers[0].s_factor, fac1.L);
  double kl_deep = 0.0;
  std::vector<std::vector<LayerSolve>> kl_fac;  // [draw][n-1]
  VectorXd kl_alphas;
  if (N > 1) {
    if (estimated) {
      kl_alphas.resize(S);
      kl_fac.resize(S);
      for (int s = 0; s < S; ++s) {
        kl_alphas[s] = model.alpha.m_alpha +
                       std::sqrt(model.alpha.s_alpha) * nb.alpha_kl_std[s];
        double acc = 0.0;
        for (int n = 1; n < N; ++n) {
          LayerSolve fac = factor_layern(model.layers[n], kl_alphas[s]);
          acc += kl_from_factors(model.layers[n].m_vec,
                                 model.layers[n].s_factor, fac.L);
          if (grad) kl_fac[s].push_back(std::move(fac));
        }
        kl_deep += acc / S;
      }
    } else {
      kl_fac.resize(1);
      for (int n = 1; n < N; ++n) {
        LayerSolve fac = factor_layern(model.layers[n], model.alpha_value);
        kl_deep += kl_from_factors(model.layers[n].m_vec,
                                   model.layers[n].s_factor, fac.L);
        if (grad) kl_fac[0].push_back(std::move(fac));
      }
    }
  }

  double kl_alpha = 0.0;
  if (estimated) {
    kl_alpha = kl_univariate_normal(model.alpha.m_alpha, model.alpha.s_alpha,
                                    model.alpha.prior_mean,
                                    model.alpha.prior_var);
  }

  const double value = e_term - kl1 - kl_deep - kl_alpha;
  if (!grad) return value;

  // ------------------------------------------------------------------
  // Backward pass.
  // ------------------------------------------------------------------
  grad->layers.assign(N, LayerGrad{});
  for (int n = 0; n < N; ++n) {
    const LayerState& ly = model.layers[n];
    LayerGrad& g = grad->layers[n];
    g.Z = MatrixXd::Zero(ly.Z.rows(), ly.Z.cols());
    g.m_vec = VectorXd::Zero(ly.m_vec.size());
    g.s_factor = MatrixXd::Zero(ly.s_factor.rows(), ly.s_factor.cols());
    g.s_mat = MatrixXd::Zero(ly.s_factor.rows(), ly.s_factor.cols());
    g.delta_Z = VectorXd::Zero(ly.delta_Z.size());
    g.sigma2 = 0.0;
    g.lambda = 0.0;
  }
  grad->noise_var = 0.0;
  grad->m_alpha = 0.0;
  grad->s_alpha = 0.0;
  grad->alpha_value = 0.0;
  grad->value = value;

  AlphaGradAccum alpha_acc;
  CondAdj adj1;
  adj1.init(b);

  MatrixXd Kzx_bar, K_bar;
  for (int t = 0; t < T; ++t) {
    // Likelihood adjoints.
    const VectorXd& fN = f_final[t];
    VectorXd f_bar(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double r = yb[i] - fN[i];
      f_bar[i] = w_ll * r / v;
      grad->noise_var += w_ll * (-0.5 / v + 0.5 * r * r / (v * v));
    }

    double alpha_bar_t = 0.0;
    for (int n = N - 1; n >= 1; --n) {
      const LayerState& ly = model.layers[n];
      const DeepStash& ds = stash[t][n - 1];
      CondAdj adj;
      adj.init(b);
      adj.mu_bar = f_bar;
      for (Eigen::Index i = 0; i < b; ++i) {
        adj.var_bar[i] = (ds.w.var_raw[i] > kVarFloor)
                             ? f_bar[i] * nb.eps[t](n, i) * 0.5 /
                                   std::sqrt(ds.w.var[i])
                             : 0.0;
      }
      backprop_conditional(ly, ds.fac, ds.w, adj, grad->layers[n], Kzx_bar,
                           K_bar);
      VectorXd f_prev_bar = VectorXd::Zero(b);
      pullback_kzx_nonstat(ly, ds.fac, alphas[t], Xb, f_stash[t][n - 1],
                           Kzx_bar, grad->layers[n], alpha_bar_t, f_prev_bar);
      pullback_kzz_nonstat(ly, ds.fac, alphas[t], K_bar, grad->layers[n],
                           alpha_bar_t);
      f_bar = std::move(f_prev_bar);
    }
    // Layer 1 adjoints accumulate across t; flushed once below.
    adj1.mu_bar += f_bar;
    for (Eigen::Index i = 0; i < b; ++i) {
      if (w1.var_raw[i] > kVarFloor) {
        adj1.var_bar[i] +=
            f_bar[i] * nb.eps[t](0, i) * 0.5 / std::sqrt(w1.var[i]);
      }
    }
    chain_alpha_draw(model, alpha_bar_t, nb.alpha_std[t], alpha_acc);
  }

  backprop_conditional(model.layers[0], fac1, w1, adj1, grad->layers[0],
                       Kzx_bar, K_bar);
  pullback_kzx_stat(model.layers[0], Xb, Kzx_bar, grad->layers[0]);
  // KL for layer 1 shares the same Kzz; fold its K_bar in before pullback.
  {
    MatrixXd K_bar_kl;
    backprop_kl(model.layers[0], fac1.L, 1.0, grad->layers[0], K_bar_kl);
    K_bar += K_bar_kl;
    pullback_kzz_stat(model.layers[0], K_bar, grad->layers[0]);
  }

  // Deep-layer KL terms.
  if (N > 1) {
    if (estimated) {
      for (int s = 0; s < S; ++s) {
        double alpha_bar_s = 0.0;
        for (int n = 1; n < N; ++n) {
          MatrixXd K_bar_kl;
          backprop_kl(model.layers[n], kl_fac[s][n - 1].L, 1.0 / S,
                      grad->layers[n], K_bar_kl);
          pullback_kzz_nonstat(model.layers[n], kl_fac[s][n - 1], kl_alphas[s],
                               K_bar_kl, grad->layers[n], alpha_bar_s);
        }
        chain_alpha_draw(model, alpha_bar_s, nb.alpha_kl_std[s], alpha_acc);
      }
    } else {
      double alpha_bar = 0.0;
      for (int n = 1; n < N; ++n) {
        MatrixXd K_bar_kl;
        backprop_kl(model.layers[n], kl_fac[0][n - 1].L, 1.0, grad->layers[n],
                    K_bar_kl);
        pullback_kzz_nonstat(model.layers[n], kl_fac[0][n - 1],
                             model.alpha_value, K_bar_kl, grad->layers[n],
                             alpha_bar);
      }
      if (model.alpha_mode == AlphaMode::optimized) {
        alpha_acc.d_alpha_scalar += alpha_bar;
      }
    }
  }

  if (estimated) {
    double dm = 0.0, dsv = 0.0;
    kl_alpha_gradient(model.alpha, dm, dsv);
    alpha_acc.d_m_alpha += dm;
    alpha_acc.d_s_alpha += dsv;
  }

  // s_mat -> factor-space gradient.
  for (int n = 0; n < N; ++n) {
    const LayerState& ly = model.layers[n];
    LayerGrad& g = grad->layers[n];
    MatrixXd SL_bar =
        (g.s_mat + g.s_mat.transpose()) * ly.s_factor;
    g.s_factor = SL_bar.triangularView<Eigen::Lower>();
  }

  grad->m_alpha = alpha_acc.d_m_alpha;
  grad->s_alpha = alpha_acc.d_s_alpha;
  grad->alpha_value = alpha_acc.d_alpha_scalar;
  return value;
}

}  // namespace

double elbo_value(const DgpModel& model, const MatrixXd& X, const VectorXd& y,
                  const NoiseBundle& nb, int n_total) {
  return elbo_pass(model, X, y, nb, n_total, nullptr);
}

ModelGrad elbo_gradient(const DgpModel& model, const MatrixXd& X,
                        const VectorXd& y, const NoiseBundle& nb,
                        int n_total) {
  ModelGrad grad;
  elbo_pass(model, X, y, nb, n_total, &grad);
  return grad;
}

ElboEstimate elbo_minibatch(const DgpModel& model, const MatrixXd& X,
                            const VectorXd& y, const std::vector<int>& batch,
                            int T, int S, std::uint64_t seed) {
  NoiseBundle nb = draw_noise(batch, model.n_layers, T, S, seed);
  ElboEstimate est;
  est.value = elbo_value(model, X, y, nb, static_cast<int>(X.rows()));
  est.n_mc = T;
  est.batch_indices = nb.batch;
  est.rng_seed = seed;
  return est;
}

double expected_log_lik(const VectorXd& x_i, double y_i, const DgpModel& model,
                        int T, Rng& rng) {
  if (T < 1) throw DomainError("expected_log_lik: T must be >= 1");
  MatrixXd xb(1, x_i.size());
  xb.row(0) = x_i.transpose();
  double acc = 0.0;
  for (int t = 0; t < T; ++t) {
    const ForwardResult fr = forward_sample(xb, model, rng);
    acc += gaussian_log_pdf(y_i, fr.f[0], model.noise_var);
  }
  return acc / T;
}

}  // namespace dgpe
