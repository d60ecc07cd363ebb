#include "dgpe/predict.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace dgpe {

namespace {

// One replicate: draw alpha, then the layer recursion at all points.
void replicate_draw(const MatrixXd& x_star, const DgpModel& model,
                    const LayerSolve& fac1, const CondWork& w1,
                    std::uint64_t seed, std::uint64_t r, bool include_noise,
                    MatrixXd& samples) {
  Rng rng(seed, r + 1);
  const Eigen::Index p = x_star.rows();
  const double alpha =
      model.alpha_mode == AlphaMode::estimated
          ? model.alpha.m_alpha + std::sqrt(model.alpha.s_alpha) * rng.normal()
          : model.alpha_value;

  VectorXd eps(p);
  for (Eigen::Index i = 0; i < p; ++i) eps[i] = rng.normal();
  VectorXd f = sample_layer(w1.mean, w1.var, eps);

  CondWork w;
  for (int n = 1; n < model.n_layers; ++n) {
    const LayerState& ly = model.layers[n];
    const LayerSolve fac = factor_layern(ly, alpha);
    conditional_nonstat(fac, ly, alpha, x_star, f, w);
    for (Eigen::Index i = 0; i < p; ++i) eps[i] = rng.normal();
    f = sample_layer(w.mean, w.var, eps);
  }
  if (include_noise) {
    const double sd = std::sqrt(model.noise_var);
    for (Eigen::Index i = 0; i < p; ++i) f[i] += sd * rng.normal();
  }
  samples.row(static_cast<Eigen::Index>(r)) =
      (f.array() * model.y_scale + model.y_mean).transpose();
}

}  // namespace

MatrixXd predict_samples(const MatrixXd& x_star, const DgpModel& model, int R,
                         std::uint64_t seed, int threads, bool include_noise) {
  model.validate();
  if (R < 1) throw DomainError("predict_samples: R must be >= 1");
  if (x_star.cols() != model.input_dim) {
    throw DimMismatch("predict_samples: input dimension mismatch");
  }

  // The stationary first layer is replicate-independent.
  const LayerSolve fac1 = factor_layer1(model.layers[0]);
  CondWork w1;
  conditional_stat(fac1, model.layers[0], x_star, w1);

  MatrixXd samples(R, x_star.rows());
  const int n_workers = std::max(1, threads);
  if (n_workers == 1) {
    for (int r = 0; r < R; ++r) {
      replicate_draw(x_star, model, fac1, w1, seed, r, include_noise, samples);
    }
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < n_workers; ++w) {
      pool.emplace_back([&]() {
        for (int r = next.fetch_add(1); r < R; r = next.fetch_add(1)) {
          replicate_draw(x_star, model, fac1, w1, seed, r, include_noise,
                         samples);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  return samples;
}

double empirical_quantile(VectorXd values, double q) {
  const Eigen::Index n = values.size();
  if (n < 1) throw DomainError("empirical_quantile: empty sample");
  if (q < 0.0 || q > 1.0) throw DomainError("empirical_quantile: q outside [0,1]");
  std::sort(values.data(), values.data() + n);
  const double h = q * static_cast<double>(n - 1);
  const Eigen::Index lo = static_cast<Eigen::Index>(std::floor(h));
  if (lo >= n - 1) return values[n - 1];
  const double frac = h - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

PredictiveSummary summarize(const MatrixXd& samples, double level,
                            bool keep_samples) {
  const Eigen::Index R = samples.rows();
  const Eigen::Index p = samples.cols();
  if (R < 2) throw DomainError("summarize: need at least 2 samples");
  if (!(level > 0.0 && level < 1.0)) {
    throw DomainError("summarize: level must be in (0,1)");
  }
  PredictiveSummary s;
  s.mean.resize(p);
  s.variance.resize(p);
  s.lower95.resize(p);
  s.upper95.resize(p);
  const double q_lo = (1.0 - level) / 2.0;
  const double q_hi = 1.0 - q_lo;
  for (Eigen::Index j = 0; j < p; ++j) {
    const VectorXd col = samples.col(j);
    const double mu = col.mean();
    s.mean[j] = mu;
    s.variance[j] = (col.array() - mu).square().sum() / static_cast<double>(R - 1);
    s.lower95[j] = empirical_quantile(col, q_lo);
    s.upper95[j] = empirical_quantile(col, q_hi);
  }
  if (keep_samples) s.samples = samples;
  return s;
}

}  // namespace dgpe
