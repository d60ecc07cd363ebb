#include <Eigen/Eigenvalues>

#include "dgpe/kernels.hpp"
#include "dgpe/rng.hpp"
#include "doctest.h"

using namespace dgpe;

namespace {

VectorXd rand_vec(int d, Rng& rng) {
  VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("matern_corr closed-form values") {
  CHECK(matern_corr(0.0, {0.5, 1.0, 1.0}) == doctest::Approx(1.0));
  CHECK(matern_corr(0.0, {2.5, 0.3, 2.0}) == doctest::Approx(1.0));
  CHECK(matern_corr(1.0, {0.5, 1.0, 1.0}) == doctest::Approx(std::exp(-1.0)));
  const double s5 = std::sqrt(5.0);
  CHECK(matern_corr(1.0, {2.5, 1.0, 1.0}) ==
        doctest::Approx((1.0 + s5 + 5.0 / 3.0) * std::exp(-s5)));
  CHECK_THROWS_AS(matern_corr(-0.1, {2.5, 1.0, 1.0}), DomainError);
}

TEST_CASE("matern_corr is strictly decreasing and vanishes") {
  for (double nu : {0.5, 1.5, 2.5}) {
    const MaternSpec spec{nu, 0.7, 1.0};
    double prev = matern_corr(0.0, spec);
    for (double r = 0.05; r < 5.0; r += 0.05) {
      const double cur = matern_corr(r, spec);
      CHECK(cur < prev);
      prev = cur;
    }
    CHECK(matern_corr(300.0, spec) < 1e-12);
  }
}

TEST_CASE("matern_rho derivative matches finite differences") {
  Rng rng(3);
  for (double nu : {0.5, 1.5, 2.5}) {
    for (int i = 0; i < 20; ++i) {
      const double t = 0.05 + 3.0 * rng.uniform();
      double r1, d1, rl, dl, rh, dh;
      matern_rho(t, nu, r1, d1);
      const double h = 1e-6;
      matern_rho(t - h, nu, rl, dl);
      matern_rho(t + h, nu, rh, dh);
      CHECK(d1 == doctest::Approx((rh - rl) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("length_scale behavior") {
  CHECK(length_scale(7.0, 0.0) == doctest::Approx(1.0));
  CHECK(length_scale(0.0, 3.0) == doctest::Approx(1.0));
  CHECK(length_scale(1.0, 2.0) == doctest::Approx(std::exp(2.0)));
  // clamp keeps values finite
  CHECK(length_scale(100.0, 10.0) == doctest::Approx(std::exp(40.0)));
  CHECK(length_scale(-100.0, 10.0) == doctest::Approx(std::exp(-40.0)));
}

TEST_CASE("nonstat_cov diagonal equals sigma2") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform_int(4));
    const VectorXd x = rand_vec(d, rng);
    const double f = rng.normal();
    NonStatKernel k{{2.5, 0.5 + rng.uniform(), 0.5 + 2.0 * rng.uniform()},
                    rng.uniform() * 5.0, d};
    CHECK(nonstat_cov(x, x, f, f, k) == doctest::Approx(k.base.sigma2));
  }
}

TEST_CASE("alpha=0 reduces the non-stationary kernel to the stationary one") {
  Rng rng(17);
  for (int rep = 0; rep < 500; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform_int(3));
    const VectorXd x = rand_vec(d, rng);
    const VectorXd xp = rand_vec(d, rng);
    const MaternSpec spec{2.5, 0.3 + rng.uniform(), 0.5 + rng.uniform()};
    const NonStatKernel k{spec, 0.0, d};
    const double ns = nonstat_cov(x, xp, rng.normal(), rng.normal(), k);
    const double st = stat_cov(x, xp, spec);
    CHECK(std::abs(ns - st) <= 1e-14 * spec.sigma2);
  }
}

TEST_CASE("covariance decays to zero as alpha grows") {
  VectorXd x(1), xp(1);
  x << 0.0;
  xp << 0.5;
  const MaternSpec spec{2.5, 1.0, 1.0};
  double prev = 1e300;
  for (double alpha : {1.0, 5.0, 10.0, 20.0}) {
    const NonStatKernel k{spec, alpha, 1};
    const double v = nonstat_cov(x, xp, 1.0, 1.0, k);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("vanishing: grid over alpha eventually decreasing, below 1e-6 by 30") {
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd x(1), xp(1);
    x << 0.25;
    xp << 0.75;  // distance 0.5
    const double f = 0.5 + 1.5 * rng.uniform();
    const double fp = 0.5 + 1.5 * rng.uniform();
    const MaternSpec spec{2.5, 1.0, 1.0};
    std::vector<double> vals;
    for (int a = 0; a <= 30; ++a) {
      vals.push_back(nonstat_cov(x, xp, f, fp, NonStatKernel{spec, double(a), 1}));
    }
    const auto mx = std::max_element(vals.begin(), vals.end());
    for (auto it = mx; it + 1 != vals.end(); ++it) {
      CHECK(*(it + 1) <= *it + 1e-15);
    }
    CHECK(vals.back() < 1e-6);
  }
}

TEST_CASE("prefactor bounded by one, equality iff H = H'") {
  Rng rng(29);
  for (int rep = 0; rep < 200; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform_int(5));
    const double la = 3.0 * rng.normal();
    const double lb = 3.0 * rng.normal();
    // at r = 0 the covariance is sigma2 * prefactor
    const MaternSpec spec{2.5, 1.0, 1.0};
    const double pre = nonstat_cov_logh(0.0, la, lb, d, spec);
    CHECK(pre > 0.0);
    CHECK(pre <= 1.0 + 1e-15);
    if (std::abs(la - lb) > 1e-6) CHECK(pre < 1.0);
  }
  const MaternSpec spec{2.5, 1.0, 1.0};
  CHECK(nonstat_cov_logh(0.0, 1.3, 1.3, 3, spec) == doctest::Approx(1.0));
}

TEST_CASE("kernel symmetry under argument swap") {
  Rng rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    const int d = 1 + static_cast<int>(rng.uniform_int(3));
    const VectorXd x = rand_vec(d, rng);
    const VectorXd xp = rand_vec(d, rng);
    const double f = rng.normal(), fp = rng.normal();
    const NonStatKernel k{{2.5, 0.8, 1.3}, 2.0 * rng.uniform(), d};
    CHECK(nonstat_cov(x, xp, f, fp, k) ==
          doctest::Approx(nonstat_cov(xp, x, fp, f, k)).epsilon(1e-14));
  }
}

TEST_CASE("stat_cov examples and consistency") {
  VectorXd x(1), xp(1);
  x << 0.0;
  xp << 1.0;
  CHECK(stat_cov(x, x, {0.5, 1.0, 2.0}) == doctest::Approx(2.0));
  CHECK(stat_cov(x, xp, {0.5, 1.0, 2.0}) == doctest::Approx(2.0 * std::exp(-1.0)));
  VectorXd bad(2);
  CHECK_THROWS_AS(stat_cov(x, bad, MaternSpec{}), DomainError);
}

TEST_CASE("gram basics") {
  MatrixXd X(1, 2);
  X << 0.3, 0.4;
  const MaternSpec spec{2.5, 1.0, 1.7};
  const MatrixXd G = gram(X, X, spec);
  CHECK(G.rows() == 1);
  CHECK(G(0, 0) == doctest::Approx(1.7));
}

TEST_CASE("gram with alpha=0 equals stationary gram entrywise") {
  Rng rng(37);
  MatrixXd X(3, 2);
  VectorXd f(3);
  for (int i = 0; i < 3; ++i) {
    f[i] = rng.normal();
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform();
  }
  const MaternSpec spec{2.5, 0.6, 1.1};
  const MatrixXd Gs = gram(X, X, spec);
  const MatrixXd Gn = gram(X, X, f, f, NonStatKernel{spec, 0.0, 2});
  CHECK((Gs - Gn).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("self-gram is symmetric PSD before jitter") {
  Rng rng(41);
  MatrixXd X(5, 2);
  VectorXd f(5);
  for (int i = 0; i < 5; ++i) {
    f[i] = rng.normal();
    for (int j = 0; j < 2; ++j) X(i, j) = rng.uniform();
  }
  for (double alpha : {0.0, 1.0, 3.0}) {
    const MatrixXd G = gram_self(X, f, NonStatKernel{{2.5, 0.5, 1.0}, alpha, 2});
    CHECK((G - G.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  const MatrixXd Gs = gram_self(X, MaternSpec{1.5, 0.5, 1.0});
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(Gs);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("nonstat gradient payload matches finite differences") {
  Rng rng(43);
  for (int rep = 0; rep < 50; ++rep) {
    const double r = 0.05 + rng.uniform();
    const double la = rng.normal();
    const double lb = rng.normal();
    const int d = 1 + static_cast<int>(rng.uniform_int(4));
    const MaternSpec spec{2.5, 0.4 + rng.uniform(), 0.5 + rng.uniform()};
    const PairCovGrad g = nonstat_cov_logh_grad(r, la, lb, d, spec);
    const double h = 1e-6;
    auto fd = [&](auto eval) { return eval; };
    (void)fd;
    CHECK(g.k == doctest::Approx(nonstat_cov_logh(r, la, lb, d, spec)));
    CHECK(g.dk_dr ==
          doctest::Approx((nonstat_cov_logh(r + h, la, lb, d, spec) -
                           nonstat_cov_logh(r - h, la, lb, d, spec)) /
                          (2 * h)).epsilon(1e-5));
    CHECK(g.dk_dla ==
          doctest::Approx((nonstat_cov_logh(r, la + h, lb, d, spec) -
                           nonstat_cov_logh(r, la - h, lb, d, spec)) /
                          (2 * h)).epsilon(1e-5));
    CHECK(g.dk_dlb ==
          doctest::Approx((nonstat_cov_logh(r, la, lb + h, d, spec) -
                           nonstat_cov_logh(r, la, lb - h, d, spec)) /
                          (2 * h)).epsilon(1e-5));
    MaternSpec sl = spec, sh = spec;
    sl.lambda -= h;
    sh.lambda += h;
    CHECK(g.dk_dlambda ==
          doctest::Approx((nonstat_cov_logh(r, la, lb, d, sh) -
                           nonstat_cov_logh(r, la, lb, d, sl)) /
                          (2 * h)).epsilon(1e-5));
    MaternSpec vl = spec, vh = spec;
    vl.sigma2 -= h;
    vh.sigma2 += h;
    CHECK(g.dk_dsigma2 ==
          doctest::Approx((nonstat_cov_logh(r, la, lb, d, vh) -
                           nonstat_cov_logh(r, la, lb, d, vl)) /
                          (2 * h)).epsilon(1e-5));
  }
}
