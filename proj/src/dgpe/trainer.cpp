#include "dgpe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dgpe {

void adam_step(VectorXd& params, const VectorXd& grad, AdamState& state,
               const AdamHyper& hyper) {
  if (params.size() != grad.size()) {
    throw DomainError("adam_step: shape mismatch");
  }
  if (state.m.size() != params.size()) {
    state.m = VectorXd::Zero(params.size());
    state.v = VectorXd::Zero(params.size());
    state.step = 0;
  }
  state.step += 1;
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad;
  state.v = hyper.beta2 * state.v +
            (1.0 - hyper.beta2) * grad.array().square().matrix();
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  params.array() -= hyper.lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + hyper.eps);
}

namespace {

bool try_chol(const MatrixXd& M, MatrixXd& L) {
  Eigen::LLT<MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) return false;
  L = llt.matrixL();
  return (L.diagonal().array() > 0.0).all();
}

}  // namespace

void natgrad_step(LayerState& layer, const VectorXd& dL_dm,
                  const MatrixXd& dL_ds, double gamma) {
  if (gamma == 0.0) return;
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw DomainError("natgrad_step: gamma must be in (0, 1]");
  }
  const Eigen::Index m = layer.m_vec.size();
  if (dL_dm.size() != m || dL_ds.rows() != m || dL_ds.cols() != m) {
    throw DomainError("natgrad_step: shape mismatch");
  }

  MatrixXd Ls;
  if (!try_chol(layer.s_mat(), Ls)) {
    throw StepFailed("natgrad_step: current s is not positive definite");
  }
  MatrixXd s_inv = Ls.triangularView<Eigen::Lower>().solve(
      MatrixXd::Identity(m, m));
  s_inv = s_inv.transpose() * s_inv;

  const VectorXd theta1 = s_inv * layer.m_vec;
  const VectorXd d_eta1 = dL_dm - 2.0 * dL_ds * layer.m_vec;

  double step = gamma;
  for (int attempt = 0; attempt <= 10; ++attempt) {
    // s_new^-1 = s^-1 - 2 * step * dL/ds
    const MatrixXd prec_new = s_inv - 2.0 * step * dL_ds;
    MatrixXd Lp;
    if (try_chol(0.5 * (prec_new + prec_new.transpose()), Lp)) {
      MatrixXd s_new = Lp.triangularView<Eigen::Lower>().solve(
          MatrixXd::Identity(m, m));
      s_new = s_new.transpose() * s_new;
      const VectorXd theta1_new = theta1 + step * d_eta1;
      MatrixXd Ls_new;
      if (try_chol(0.5 * (s_new + s_new.transpose()), Ls_new)) {
        layer.m_vec = s_new * theta1_new;
        layer.s_factor = Ls_new;
        return;
      }
    }
    step *= 0.5;
  }
  throw StepFailed("natgrad_step: could not restore positive definiteness");
}

MatrixXd kmeans_pp(const MatrixXd& X, int k, Rng& rng, int lloyd_iters) {
  const Eigen::Index n = X.rows();
  if (k < 1) throw DomainError("kmeans_pp: k must be >= 1");
  MatrixXd centers(k, X.cols());
  if (n == 0) throw DomainError("kmeans_pp: empty input");
  if (k >= n) {
    // Take every point, then recycle with small deterministic offsets.
    for (int j = 0; j < k; ++j) {
      centers.row(j) = X.row(j % n);
      if (j >= n) {
        centers.row(j).array() += 1e-4 * (1.0 + static_cast<double>(j - n));
      }
    }
    return centers;
  }

  // Seeding: first uniform, then proportional to squared distance.
  std::vector<Eigen::Index> chosen;
  chosen.push_back(static_cast<Eigen::Index>(rng.uniform_int(n)));
  VectorXd d2 = (X.rowwise() - X.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.uniform_int(n));
    } else {
      double u = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= d2[pick];
        if (u <= 0.0) break;
      }
    }
    chosen.push_back(pick);
    d2 = d2.cwiseMin(
        (X.rowwise() - X.row(pick)).rowwise().squaredNorm());
  }
  for (int j = 0; j < k; ++j) centers.row(j) = X.row(chosen[j]);

  // Lloyd refinement.
  std::vector<int> assign(n, 0);
  for (int it = 0; it < lloyd_iters; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double bd = (X.row(i) - centers.row(0)).squaredNorm();
      for (int j = 1; j < k; ++j) {
        const double dq = (X.row(i) - centers.row(j)).squaredNorm();
        if (dq < bd) {
          bd = dq;
          best = j;
        }
      }
      assign[i] = static_cast<int>(best);
    }
    MatrixXd sums = MatrixXd::Zero(k, X.cols());
    VectorXd counts = VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[i]) += X.row(i);
      counts[assign[i]] += 1.0;
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] > 0.0) centers.row(j) = sums.row(j) / counts[j];
    }
  }
  return centers;
}

// ---------------------------------------------------------------------------
// Parameter packing
// ---------------------------------------------------------------------------

ParamPacker::ParamPacker(const DgpModel& model, PackOptions opt)
    : opt_(opt),
      n_layers_(model.n_layers),
      input_dim_(model.input_dim),
      mode_(model.alpha_mode) {
  size_ = 0;
  for (int n = 0; n < n_layers_; ++n) {
    const Eigen::Index m = model.layers[n].n_inducing();
    m_.push_back(m);
    const bool variational =
        opt_.include_last_layer_variational || n != n_layers_ - 1;
    size_ += m * input_dim_;                       // Z
    if (variational) size_ += m + m * (m + 1) / 2; // m_vec + s_factor
    if (n > 0) size_ += m;                         // delta
    size_ += 2;                                    // sigma2, lambda
  }
  if (opt_.include_noise) size_ += 1;
  if (mode_ == AlphaMode::estimated) size_ += 2;
  if (mode_ == AlphaMode::optimized) size_ += 1;
}

VectorXd ParamPacker::pack(const DgpModel& model) const {
  VectorXd th(size_);
  Eigen::Index p = 0;
  for (int n = 0; n < n_layers_; ++n) {
    const LayerState& ly = model.layers[n];
    const Eigen::Index m = m_[n];
    for (Eigen::Index i = 0; i < m; ++i) {
      for (int d = 0; d < input_dim_; ++d) th[p++] = ly.Z(i, d);
    }
    const bool variational =
        opt_.include_last_layer_variational || n != n_layers_ - 1;
    if (variational) {
      for (Eigen::Index i = 0; i < m; ++i) th[p++] = ly.m_vec[i];
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
          th[p++] = (i == j) ? std::log(ly.s_factor(i, i))
                             : ly.s_factor(i, j);
        }
      }
    }
    if (n > 0) {
      for (Eigen::Index i = 0; i < m; ++i) th[p++] = ly.delta_Z[i];
    }
    th[p++] = softplus_inv(ly.kernel.sigma2 - kHyperFloor);
    th[p++] = softplus_inv(ly.kernel.lambda - kHyperFloor);
  }
  if (opt_.include_noise) th[p++] = softplus_inv(model.noise_var - kNoiseFloor);
  if (mode_ == AlphaMode::estimated) {
    th[p++] = model.alpha.m_alpha;
    th[p++] = softplus_inv(model.alpha.s_alpha - kHyperFloor);
  }
  if (mode_ == AlphaMode::optimized) th[p++] = softplus_inv(model.alpha_value);
  return th;
}

void ParamPacker::unpack(const VectorXd& theta, DgpModel& model) const {
  if (theta.size() != size_) throw DomainError("unpack: size mismatch");
  Eigen::Index p = 0;
  for (int n = 0; n < n_layers_; ++n) {
    LayerState& ly = model.layers[n];
    const Eigen::Index m = m_[n];
    for (Eigen::Index i = 0; i < m; ++i) {
      for (int d = 0; d < input_dim_; ++d) ly.Z(i, d) = theta[p++];
    }
    const bool variational =
        opt_.include_last_layer_variational || n != n_layers_ - 1;
    if (variational) {
      for (Eigen::Index i = 0; i < m; ++i) ly.m_vec[i] = theta[p++];
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
          ly.s_factor(i, j) =
              (i == j) ? std::exp(theta[p]) : theta[p];
          ++p;
        }
      }
    }
    if (n > 0) {
      for (Eigen::Index i = 0; i < m; ++i) ly.delta_Z[i] = theta[p++];
    }
    ly.kernel.sigma2 = kHyperFloor + softplus(theta[p++]);
    ly.kernel.lambda = kHyperFloor + softplus(theta[p++]);
  }
  if (opt_.include_noise) model.noise_var = kNoiseFloor + softplus(theta[p++]);
  if (mode_ == AlphaMode::estimated) {
    model.alpha.m_alpha = theta[p++];
    model.alpha.s_alpha = kHyperFloor + softplus(theta[p++]);
  }
  if (mode_ == AlphaMode::optimized) model.alpha_value = softplus(theta[p++]);
}

VectorXd ParamPacker::pack_grad(const DgpModel& model,
                                const ModelGrad& grad) const {
  VectorXd g(size_);
  Eigen::Index p = 0;
  for (int n = 0; n < n_layers_; ++n) {
    const LayerState& ly = model.layers[n];
    const LayerGrad& lg = grad.layers[n];
    const Eigen::Index m = m_[n];
    for (Eigen::Index i = 0; i < m; ++i) {
      for (int d = 0; d < input_dim_; ++d) g[p++] = lg.Z(i, d);
    }
    const bool variational =
        opt_.include_last_layer_variational || n != n_layers_ - 1;
    if (variational) {
      for (Eigen::Index i = 0; i < m; ++i) g[p++] = lg.m_vec[i];
      for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
          g[p++] = (i == j) ? lg.s_factor(i, i) * ly.s_factor(i, i)
                            : lg.s_factor(i, j);
        }
      }
    }
    if (n > 0) {
      for (Eigen::Index i = 0; i < m; ++i) g[p++] = lg.delta_Z[i];
    }
    g[p++] = lg.sigma2 * sigmoid(softplus_inv(ly.kernel.sigma2 - kHyperFloor));
    g[p++] = lg.lambda * sigmoid(softplus_inv(ly.kernel.lambda - kHyperFloor));
  }
  if (opt_.include_noise) {
    g[p++] = grad.noise_var *
             sigmoid(softplus_inv(model.noise_var - kNoiseFloor));
  }
  if (mode_ == AlphaMode::estimated) {
    g[p++] = grad.m_alpha;
    g[p++] = grad.s_alpha * sigmoid(softplus_inv(model.alpha.s_alpha - kHyperFloor));
  }
  if (mode_ == AlphaMode::optimized) {
    g[p++] = grad.alpha_value * sigmoid(softplus_inv(model.alpha_value));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void TrainConfig::validate(Eigen::Index n_data) const {
  if (n_data < 1) throw DomainError("train: empty dataset");
  if (n_iters < 0) throw DomainError("train: n_iters must be >= 0");
  if (batch_size < 0 || batch_size > n_data) {
    throw DomainError("train: batch_size must be in [0, n_S]");
  }
  if (!(nat_grad_step > 0.0 && nat_grad_step <= 1.0)) {
    throw DomainError("train: nat_grad_step must be in (0, 1]");
  }
  if (!(adam.lr > 0.0)) throw DomainError("train: lr must be > 0");
  if (T < 1 || S < 1) throw DomainError("train: T and S must be >= 1");
  if (n_layers < 1) throw DomainError("train: n_layers must be >= 1");
  if (n_inducing < 1) throw DomainError("train: n_inducing must be >= 1");
}

DgpModel init_model(const MatrixXd& X, const VectorXd& y,
                    const TrainConfig& cfg) {
  cfg.validate(X.rows());
  DgpModel model;
  model.input_dim = static_cast<int>(X.cols());
  model.n_layers = cfg.n_layers;
  model.alpha_mode = cfg.alpha_mode;
  model.alpha.m_alpha = cfg.alpha_init_m;
  model.alpha.s_alpha = cfg.alpha_init_s;
  model.alpha.prior_mean = cfg.alpha_prior_mean;
  model.alpha.prior_var = cfg.alpha_prior_var;
  model.alpha_value = cfg.alpha_value;
  model.noise_var = cfg.noise_init;

  if (cfg.standardize_y) {
    model.y_mean = y.mean();
    const double var =
        (y.array() - model.y_mean).square().sum() / std::max<double>(1, y.size() - 1);
    model.y_scale = var > 0.0 ? std::sqrt(var) : 1.0;
  }

  Rng km_rng(cfg.seed, 7);
  const MatrixXd Z0 = kmeans_pp(X, cfg.n_inducing, km_rng);
  const Eigen::Index m = Z0.rows();
  for (int n = 0; n < cfg.n_layers; ++n) {
    LayerState ly;
    ly.Z = Z0;
    ly.m_vec = VectorXd::Zero(m);
    ly.s_factor = 1e-2 * MatrixXd::Identity(m, m);
    if (n > 0) ly.delta_Z = VectorXd::Zero(m);
    ly.kernel.nu = cfg.nu;
    ly.kernel.lambda = cfg.lambda_init;
    ly.kernel.sigma2 = cfg.sigma2_init;
    model.layers.push_back(std::move(ly));
  }
  model.validate();
  return model;
}

DgpModel train(const MatrixXd& X, const VectorXd& y, const TrainConfig& cfg,
               TrainTrace& trace) {
  return train_from(init_model(X, y, cfg), X, y, cfg, trace);
}

DgpModel train_from(DgpModel model, const MatrixXd& X, const VectorXd& y,
                    const TrainConfig& cfg, TrainTrace& trace) {
  cfg.validate(X.rows());
  model.validate();
  const Eigen::Index n = X.rows();
  const VectorXd ys = (y.array() - model.y_mean) / model.y_scale;

  PackOptions opt;
  opt.include_last_layer_variational = false;
  opt.include_noise = cfg.learn_noise;
  ParamPacker packer(model, opt);
  VectorXd theta = packer.pack(model);
  AdamState adam;

  Rng master(cfg.seed, 11);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Eigen::Index cursor = n;  // force reshuffle on first use
  const Eigen::Index bsz =
      (cfg.batch_size == 0 || cfg.batch_size >= n) ? n
                                                   : cfg.batch_size;

  const auto t0 = std::chrono::steady_clock::now();
  for (int iter = 0; iter < cfg.n_iters; ++iter) {
    std::vector<int> batch(bsz);
    if (bsz == n) {
      batch = perm;
    } else {
      for (Eigen::Index j = 0; j < bsz; ++j) {
        if (cursor >= n) {
          for (Eigen::Index i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[master.uniform_int(i + 1)]);
          }
          cursor = 0;
        }
        batch[j] = perm[cursor++];
      }
    }

    const std::uint64_t noise_seed = master.raw();
    const NoiseBundle nb =
        draw_noise(batch, model.n_layers, cfg.T, cfg.S, noise_seed);
    const ModelGrad grad =
        elbo_gradient(model, X, ys, nb, static_cast<int>(n));

    // Natural-gradient step on the last layer's variational parameters.
    const double warm =
        cfg.nat_grad_warmup_iters > 0
            ? std::min(1.0, static_cast<double>(iter) /
                                cfg.nat_grad_warmup_iters)
            : 1.0;
    const double gamma = cfg.nat_grad_warmup_start +
                         (cfg.nat_grad_step - cfg.nat_grad_warmup_start) * warm;
    natgrad_step(model.layers[model.n_layers - 1],
                 grad.layers[model.n_layers - 1].m_vec,
                 grad.layers[model.n_layers - 1].s_mat, gamma);

    // Adam (descent on -ELBO) for everything else.
    const VectorXd g = packer.pack_grad(model, grad);
    adam_step(theta, (-g).eval(), adam, cfg.adam);
    packer.unpack(theta, model);

    if (cfg.eval_every > 0 &&
        (iter % cfg.eval_every == 0 || iter == cfg.n_iters - 1)) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      const bool est = model.alpha_mode == AlphaMode::estimated;
      trace.rows.push_back({iter, grad.value, secs,
                            est ? model.alpha.m_alpha : model.alpha_value,
                            est ? model.alpha.s_alpha : 0.0});
    }
  }
  return model;
}

std::string trace_csv(const TrainTrace& trace) {
  std::ostringstream os;
  os << "iteration,elbo,seconds,m_alpha,s_alpha\n";
  os.precision(17);
  for (const TraceRow& r : trace.rows) {
    os << r.iteration << ',' << r.elbo << ',' << r.seconds << ',' << r.m_alpha
       << ',' << r.s_alpha << '\n';
  }
  return os.str();
}

}  // namespace dgpe
