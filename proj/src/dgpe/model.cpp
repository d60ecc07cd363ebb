#include "dgpe/model.hpp"

namespace dgpe {

std::string alpha_mode_name(AlphaMode mode) {
  switch (mode) {
    case AlphaMode::estimated: return "estimated";
    case AlphaMode::optimized: return "optimized";
    case AlphaMode::fixed: return "fixed";
  }
  throw DomainError("alpha_mode_name: unknown mode");
}

AlphaMode alpha_mode_from_name(const std::string& name) {
  if (name == "estimated") return AlphaMode::estimated;
  if (name == "optimized") return AlphaMode::optimized;
  if (name == "fixed") return AlphaMode::fixed;
  throw DomainError("alpha mode must be estimated|optimized|fixed, got '" +
                    name + "'");
}

void DgpModel::validate() const {
  if (n_layers < 1) throw DomainError("DgpModel: need at least one layer");
  if (static_cast<int>(layers.size()) != n_layers) {
    throw DomainError("DgpModel: layer count mismatch");
  }
  if (!(noise_var > 0.0)) throw DomainError("DgpModel: noise_var must be > 0");
  for (int n = 0; n < n_layers; ++n) {
    const LayerState& ly = layers[n];
    if (ly.Z.cols() != input_dim) {
      throw DomainError("DgpModel: layer Z dimension mismatch");
    }
    if (ly.m_vec.size() != ly.Z.rows() || ly.s_factor.rows() != ly.Z.rows() ||
        ly.s_factor.cols() != ly.Z.rows()) {
      throw DomainError("DgpModel: variational shapes mismatch");
    }
    const bool has_delta = ly.delta_Z.size() > 0;
    if (n == 0 && has_delta) {
      throw DomainError("DgpModel: layer 1 must not carry delta_Z");
    }
    if (n > 0 && (!has_delta || ly.delta_Z.size() != ly.Z.rows())) {
      throw DomainError("DgpModel: deep layers need delta_Z of length m");
    }
    ly.kernel.validate();
  }
  if (alpha_mode == AlphaMode::estimated) {
    if (!(alpha.s_alpha > 0.0) || !(alpha.prior_var > 0.0)) {
      throw DomainError("DgpModel: alpha variances must be positive");
    }
  }
}

LayerSolve factor_layer1(const LayerState& layer, double jitter) {
  LayerSolve fac;
  fac.Kzz = gram_self(layer.Z, layer.kernel);
  CholeskyResult ch = cholesky_psd(fac.Kzz, jitter);
  fac.Kzz.diagonal().array() += ch.applied_jitter;
  fac.L = std::move(ch.L);
  fac.applied_jitter = ch.applied_jitter;
  return fac;
}

LayerSolve factor_layern(const LayerState& layer, double alpha, double jitter) {
  if (layer.delta_Z.size() != layer.Z.rows()) {
    throw DomainError("factor_layern: layer has no delta_Z");
  }
  LayerSolve fac;
  const Eigen::Index m = layer.Z.rows();
  const int d = static_cast<int>(layer.Z.cols());
  fac.log_h_z.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    fac.log_h_z[j] = std::clamp(alpha * layer.delta_Z[j], -kLogHClamp, kLogHClamp);
  }
  fac.Kzz.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    fac.Kzz(i, i) = layer.kernel.sigma2;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double v =
          nonstat_cov_logh((layer.Z.row(i) - layer.Z.row(j)).norm(),
                           fac.log_h_z[i], fac.log_h_z[j], d, layer.kernel);
      fac.Kzz(i, j) = v;
      fac.Kzz(j, i) = v;
    }
  }
  CholeskyResult ch = cholesky_psd(fac.Kzz, jitter);
  fac.Kzz.diagonal().array() += ch.applied_jitter;
  fac.L = std::move(ch.L);
  fac.applied_jitter = ch.applied_jitter;
  return fac;
}

namespace {

// Shared tail: given Kzx, compute B, mean, var.
void finish_conditional(const LayerSolve& fac, const LayerState& layer,
                        CondWork& w) {
  const auto& L = fac.L;
  w.B = L.triangularView<Eigen::Lower>().solve(w.Kzx);
  L.triangularView<Eigen::Lower>().transpose().solveInPlace(w.B);
  w.mean.noalias() = w.B.transpose() * layer.m_vec;
  // var_i = sigma2 - c_i^T Kzz^-1 c_i + || s_factor^T b_i ||^2
  const VectorXd qf = (w.Kzx.array() * w.B.array()).colwise().sum();
  const MatrixXd C =
      layer.s_factor.transpose().triangularView<Eigen::Upper>() * w.B;
  const VectorXd sq = C.array().square().colwise().sum();
  w.var_raw = (layer.kernel.sigma2 - qf.array() + sq.array()).matrix();
  w.var = w.var_raw.cwiseMax(kVarFloor);
}

}  // namespace

void conditional_stat(const LayerSolve& fac, const LayerState& layer,
                      const MatrixXd& Xb, CondWork& out) {
  const Eigen::Index m = layer.Z.rows();
  const Eigen::Index b = Xb.rows();
  out.Kzx.resize(m, b);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < b; ++i) {
      out.Kzx(j, i) = stat_cov_r((layer.Z.row(j) - Xb.row(i)).norm(), layer.kernel);
    }
  }
  finish_conditional(fac, layer, out);
}

void conditional_nonstat(const LayerSolve& fac, const LayerState& layer,
                         double alpha, const MatrixXd& Xb,
                         const VectorXd& f_prev, CondWork& out) {
  const Eigen::Index m = layer.Z.rows();
  const Eigen::Index b = Xb.rows();
  if (f_prev.size() != b) {
    throw DomainError("conditional_nonstat: f_prev length mismatch");
  }
  const int d = static_cast<int>(Xb.cols());
  out.Kzx.resize(m, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double lx = std::clamp(alpha * f_prev[i], -kLogHClamp, kLogHClamp);
    for (Eigen::Index j = 0; j < m; ++j) {
      out.Kzx(j, i) = nonstat_cov_logh((layer.Z.row(j) - Xb.row(i)).norm(),
                                       fac.log_h_z[j], lx, d, layer.kernel);
    }
  }
  finish_conditional(fac, layer, out);
}

std::pair<VectorXd, VectorXd> layer1_conditional(const MatrixXd& x_batch,
                                                 const LayerState& layer) {
  if (layer.delta_Z.size() > 0) {
    throw DomainError("layer1_conditional: layer carries delta_Z");
  }
  LayerSolve fac = factor_layer1(layer);
  CondWork w;
  conditional_stat(fac, layer, x_batch, w);
  return {std::move(w.mean), std::move(w.var)};
}

std::pair<VectorXd, VectorXd> layern_conditional(const MatrixXd& x_batch,
                                                 const VectorXd& f_prev,
                                                 const LayerState& layer,
                                                 double alpha) {
  LayerSolve fac = factor_layern(layer, alpha);
  CondWork w;
  conditional_nonstat(fac, layer, alpha, x_batch, f_prev, w);
  return {std::move(w.mean), std::move(w.var)};
}

VectorXd sample_layer(const VectorXd& mean, const VectorXd& var_diag,
                      const VectorXd& eps) {
  if (mean.size() != var_diag.size() || mean.size() != eps.size()) {
    throw DomainError("sample_layer: length mismatch");
  }
  if ((var_diag.array() < 0.0).any()) {
    throw DomainError("sample_layer: negative variance");
  }
  return mean.array() + eps.array() * var_diag.array().sqrt();
}

ForwardResult forward_sample(const MatrixXd& x_batch, const DgpModel& model,
                             Rng& rng) {
  model.validate();
  const Eigen::Index b = x_batch.rows();
  ForwardResult res;
  res.alpha_draw = (model.alpha_mode == AlphaMode::estimated)
                       ? model.alpha.m_alpha +
                             std::sqrt(model.alpha.s_alpha) * rng.normal()
                       : model.alpha_value;

  VectorXd eps(b);
  CondWork w;
  VectorXd f;
  for (int n = 0; n < model.n_layers; ++n) {
    const LayerState& ly = model.layers[n];
    if (n == 0) {
      LayerSolve fac = factor_layer1(ly);
      conditional_stat(fac, ly, x_batch, w);
    } else {
      LayerSolve fac = factor_layern(ly, res.alpha_draw);
      conditional_nonstat(fac, ly, res.alpha_draw, x_batch, f, w);
    }
    for (Eigen::Index i = 0; i < b; ++i) eps[i] = rng.normal();
    f = sample_layer(w.mean, w.var, eps);
  }
  res.f = std::move(f);
  return res;
}

}  // namespace dgpe
