#include "dgpe/model.hpp"
#include "doctest.h"

using namespace dgpe;

namespace {

// Small random layer; s_factor lower-triangular with positive diagonal.
LayerState random_layer(int m, int d, Rng& rng, bool deep, double s_scale = 0.3) {
  LayerState ly;
  ly.Z.resize(m, d);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) ly.Z(i, j) = rng.uniform();
  }
  ly.m_vec.resize(m);
  for (int i = 0; i < m; ++i) ly.m_vec[i] = rng.normal();
  MatrixXd A(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) A(i, j) = s_scale * rng.normal();
  }
  const MatrixXd s = A * A.transpose() + 0.05 * MatrixXd::Identity(m, m);
  ly.s_factor = Eigen::LLT<MatrixXd>(s).matrixL();
  if (deep) {
    ly.delta_Z.resize(m);
    for (int i = 0; i < m; ++i) ly.delta_Z[i] = 0.7 * rng.normal();
  }
  ly.kernel = {2.5, 0.4, 1.3};
  return ly;
}

// MC oracle for the marginalized conditional: draw u ~ q, then f | u from the
// prior conditional N(Gamma^T u, kxx - Gamma^T Kzz Gamma), and average.
void mc_marginal(const MatrixXd& Kzz, const MatrixXd& Kzx, double kxx,
                 const VectorXd& m_vec, const MatrixXd& s_factor, int n_draws,
                 Rng& rng, double& mean, double& mean_se, double& var,
                 double& var_se) {
  const Eigen::LLT<MatrixXd> llt(Kzz);
  const VectorXd gamma = llt.solve(Kzx.col(0));
  const double cond_var_prior = std::max(0.0, kxx - Kzx.col(0).dot(gamma));
  const Eigen::Index m = m_vec.size();
  double acc = 0.0, acc2 = 0.0, acc3 = 0.0, acc4 = 0.0;
  VectorXd z(m);
  for (int it = 0; it < n_draws; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) z[i] = rng.normal();
    const VectorXd u = m_vec + s_factor * z;
    const double f = gamma.dot(u) + std::sqrt(cond_var_prior) * rng.normal();
    acc += f;
    acc2 += f * f;
    acc3 += f * f * f;
    acc4 += f * f * f * f;
  }
  mean = acc / n_draws;
  const double m2 = acc2 / n_draws - mean * mean;
  var = m2 * n_draws / (n_draws - 1.0);
  mean_se = std::sqrt(m2 / n_draws);
  // SE of the sample variance via the fourth central moment.
  const double mu = mean;
  const double m4 = acc4 / n_draws - 4 * mu * acc3 / n_draws +
                    6 * mu * mu * acc2 / n_draws - 3 * mu * mu * mu * mu;
  var_se = std::sqrt(std::max(0.0, m4 - m2 * m2) / n_draws);
}

}  // namespace

TEST_CASE("layer1 conditional interpolates at inducing points when s = 0") {
  Rng rng(101);
  LayerState ly = random_layer(4, 2, rng, false);
  ly.s_factor.setZero();
  MatrixXd xb(1, 2);
  xb.row(0) = ly.Z.row(2);
  auto [mean, var] = layer1_conditional(xb, ly);
  CHECK(mean[0] == doctest::Approx(ly.m_vec[2]).epsilon(1e-6));
  CHECK(var[0] < 1e-6);
}

TEST_CASE("layer1 conditional recovers the prior when q(u) = P(u)") {
  Rng rng(103);
  LayerState ly = random_layer(5, 1, rng, false);
  ly.m_vec.setZero();
  const MatrixXd Kzz = gram_self(ly.Z, ly.kernel);
  MatrixXd Kj = Kzz;
  Kj.diagonal().array() += kJitter;  // match the factored prior
  ly.s_factor = Eigen::LLT<MatrixXd>(Kj).matrixL();
  MatrixXd xb(3, 1);
  xb << 0.11, 0.52, 0.97;
  auto [mean, var] = layer1_conditional(xb, ly);
  for (int i = 0; i < 3; ++i) {
    CHECK(mean[i] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var[i] == doctest::Approx(ly.kernel.sigma2).epsilon(1e-6));
  }
}

TEST_CASE("layer1 conditional matches the MC marginalization oracle") {
  Rng rng(107);
  for (int rep = 0; rep < 3; ++rep) {
    LayerState ly = random_layer(3, 1, rng, false);
    MatrixXd xb(1, 1);
    xb(0, 0) = rng.uniform();
    auto [mean, var] = layer1_conditional(xb, ly);

    LayerSolve fac = factor_layer1(ly);
    CondWork w;
    conditional_stat(fac, ly, xb, w);
    double mc_mean, mc_mean_se, mc_var, mc_var_se;
    mc_marginal(fac.Kzz, w.Kzx, ly.kernel.sigma2, ly.m_vec, ly.s_factor,
                1000000, rng, mc_mean, mc_mean_se, mc_var, mc_var_se);
    CHECK(std::abs(mean[0] - mc_mean) < 4.0 * mc_mean_se);
    CHECK(std::abs(var[0] - mc_var) < 4.0 * mc_var_se);
  }
}

TEST_CASE("layern conditional with alpha=0 equals the stationary path") {
  Rng rng(109);
  LayerState deep = random_layer(4, 2, rng, true);
  LayerState flat = deep;
  flat.delta_Z.resize(0);
  MatrixXd xb(5, 2);
  for (int i = 0; i < 5; ++i) {
    xb(i, 0) = rng.uniform();
    xb(i, 1) = rng.uniform();
  }
  VectorXd f_prev(5);
  for (int i = 0; i < 5; ++i) f_prev[i] = rng.normal();
  auto [mean_n, var_n] = layern_conditional(xb, f_prev, deep, 0.0);
  auto [mean_1, var_1] = layer1_conditional(xb, flat);
  CHECK((mean_n - mean_1).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((var_n - var_1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layern conditional interpolates m_vec when f_prev hits delta") {
  Rng rng(113);
  LayerState ly = random_layer(4, 1, rng, true);
  ly.s_factor.setZero();
  MatrixXd xb(1, 1);
  xb.row(0) = ly.Z.row(1);
  VectorXd f_prev(1);
  f_prev[0] = ly.delta_Z[1];
  auto [mean, var] = layern_conditional(xb, f_prev, ly, 1.7);
  CHECK(mean[0] == doctest::Approx(ly.m_vec[1]).epsilon(1e-6));
  CHECK(var[0] < 1e-6);
}

TEST_CASE("layern conditional matches the MC marginalization oracle") {
  Rng rng(127);
  for (int rep = 0; rep < 3; ++rep) {
    LayerState ly = random_layer(3, 1, rng, true);
    const double alpha = 0.5 + rng.uniform();
    MatrixXd xb(1, 1);
    xb(0, 0) = rng.uniform();
    VectorXd f_prev(1);
    f_prev[0] = rng.normal();
    auto [mean, var] = layern_conditional(xb, f_prev, ly, alpha);

    LayerSolve fac = factor_layern(ly, alpha);
    CondWork w;
    conditional_nonstat(fac, ly, alpha, xb, f_prev, w);
    double mc_mean, mc_mean_se, mc_var, mc_var_se;
    mc_marginal(fac.Kzz, w.Kzx, ly.kernel.sigma2, ly.m_vec, ly.s_factor,
                1000000, rng, mc_mean, mc_mean_se, mc_var, mc_var_se);
    CHECK(std::abs(mean[0] - mc_mean) < 4.0 * mc_mean_se);
    CHECK(std::abs(var[0] - mc_var) < 4.0 * mc_var_se);
  }
}

TEST_CASE("variance floor holds and raw values stay near non-negative") {
  Rng rng(131);
  for (int rep = 0; rep < 20; ++rep) {
    LayerState ly = random_layer(6, 2, rng, false);
    MatrixXd xb(10, 2);
    for (int i = 0; i < 10; ++i) {
      xb(i, 0) = rng.uniform();
      xb(i, 1) = rng.uniform();
    }
    LayerSolve fac = factor_layer1(ly);
    CondWork w;
    conditional_stat(fac, ly, xb, w);
    CHECK((w.var.array() >= 0.0).all());
    CHECK(w.var_raw.minCoeff() >= -1e-8);
  }
}

TEST_CASE("sample_layer arithmetic") {
  VectorXd mean(1), var(1), eps(1);
  mean << 2.0;
  var << 9.0;
  eps << 1.0;
  CHECK(sample_layer(mean, var, eps)[0] == doctest::Approx(5.0));
  eps << 0.0;
  CHECK(sample_layer(mean, var, eps)[0] == doctest::Approx(2.0));
  var << 0.0;
  eps << 3.0;
  CHECK(sample_layer(mean, var, eps)[0] == doctest::Approx(2.0));
}

namespace {

DgpModel tiny_model(int n_layers, Rng& rng, AlphaMode mode) {
  DgpModel model;
  model.input_dim = 1;
  model.n_layers = n_layers;
  model.alpha_mode = mode;
  model.alpha = {1.2, 0.4, 3.5, 1.0};
  model.alpha_value = 1.0;
  model.noise_var = 0.05;
  for (int n = 0; n < n_layers; ++n) {
    model.layers.push_back(random_layer(3, 1, rng, n > 0));
  }
  return model;
}

}  // namespace

TEST_CASE("forward_sample with one layer equals sample_layer of conditional") {
  Rng rng(137);
  DgpModel model = tiny_model(1, rng, AlphaMode::estimated);
  MatrixXd xb(2, 1);
  xb << 0.3, 0.8;

  Rng s1(999);
  const ForwardResult fr = forward_sample(xb, model, s1);

  Rng s2(999);
  const double alpha =
      model.alpha.m_alpha + std::sqrt(model.alpha.s_alpha) * s2.normal();
  CHECK(fr.alpha_draw == doctest::Approx(alpha));
  auto [mean, var] = layer1_conditional(xb, model.layers[0]);
  VectorXd eps(2);
  for (int i = 0; i < 2; ++i) eps[i] = s2.normal();
  const VectorXd expect = sample_layer(mean, var, eps);
  CHECK((fr.f - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("forward_sample is reproducible at fixed seed") {
  Rng rng(139);
  DgpModel model = tiny_model(2, rng, AlphaMode::estimated);
  MatrixXd xb(3, 1);
  xb << 0.1, 0.5, 0.9;
  Rng a(2024), b(2024);
  const ForwardResult fa = forward_sample(xb, model, a);
  const ForwardResult fb = forward_sample(xb, model, b);
  CHECK(fa.alpha_draw == fb.alpha_draw);
  CHECK((fa.f - fb.f).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("collapsed model: forward mean tracks the mean composition") {
  Rng rng(149);
  DgpModel model = tiny_model(2, rng, AlphaMode::fixed);
  model.alpha_value = 0.9;
  for (auto& ly : model.layers) ly.s_factor.setZero();
  MatrixXd xb(1, 1);
  xb << 0.42;

  auto [m1, v1] = layer1_conditional(xb, model.layers[0]);
  auto [m2, v2] =
      layern_conditional(xb, m1, model.layers[1], model.alpha_value);

  Rng s(31);
  double acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    acc += forward_sample(xb, model, s).f[0];
  }
  const double mc = acc / n;
  // The layer map is nonlinear in f1, so the composition of means is only
  // the leading term; the prior-variance channel is small here.
  CHECK(mc == doctest::Approx(m2[0]).epsilon(0.05));
}

TEST_CASE("model validation rejects malformed structures") {
  Rng rng(151);
  DgpModel model = tiny_model(2, rng, AlphaMode::estimated);
  DgpModel bad = model;
  bad.layers[0].delta_Z = VectorXd::Zero(3);
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = model;
  bad.layers[1].delta_Z.resize(0);
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = model;
  bad.noise_var = 0.0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}
