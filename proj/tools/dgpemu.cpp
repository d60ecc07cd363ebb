#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "dgpe/config.hpp"
#include "dgpe/data_io.hpp"
#include "dgpe/diagnose.hpp"
#include "dgpe/metrics.hpp"
#include "dgpe/predict.hpp"
#include "dgpe/synthetic.hpp"
#include "dgpe/trainer.hpp"

namespace fs = std::filesystem;
using namespace dgpe;

namespace {

struct TrainSetup {
  Config resolved;
  Dataset data;      // scaled, training portion
  Dataset holdout;   // optional
  bool has_holdout = false;
  TrainConfig cfg;
};

TrainSetup prepare_training(const Config& in, const std::string& config_dir) {
  TrainSetup s;
  Config& r = s.resolved;

  std::string train_csv = in.get_str("data", "train_csv", "");
  if (train_csv.empty()) throw SchemaError("config: data.train_csv is required");
  if (!fs::path(train_csv).is_absolute() && !config_dir.empty() &&
      !fs::exists(train_csv)) {
    const fs::path rel = fs::path(config_dir) / train_csv;
    if (fs::exists(rel)) train_csv = rel.string();
  }
  const std::string target = in.get_str("data", "target", "y");
  const bool na_zero = in.get_bool("data", "na_target_as_zero", false);
  const bool scale_inputs = in.get_bool("data", "scale_inputs", true);
  const long n_holdout = in.get_int("data", "n_holdout", 0);
  const long n_holdout_nonzero = in.get_int("data", "n_holdout_nonzero", -1);

  r.set("data", "train_csv", train_csv);
  r.set("data", "target", target);
  r.set_bool("data", "na_target_as_zero", na_zero);
  r.set_bool("data", "scale_inputs", scale_inputs);
  r.set_int("data", "n_holdout", n_holdout);
  r.set_int("data", "n_holdout_nonzero", n_holdout_nonzero);

  Dataset ds = load_csv(train_csv, target, na_zero);
  if (scale_inputs) ds = scale_unit_cube(ds);

  TrainConfig& c = s.cfg;
  c.n_layers = static_cast<int>(in.get_int("model", "n_layers", 2));
  c.n_inducing = static_cast<int>(in.get_int("model", "n_inducing", 200));
  c.nu = in.get_num("model", "nu", 2.5);
  c.sigma2_init = in.get_num("model", "sigma2_init", 1.0);
  c.lambda_init = in.get_num("model", "lambda_init", 0.3);
  c.noise_init = in.get_num("model", "noise_var_init", 1e-2);
  c.learn_noise = in.get_bool("model", "learn_noise", true);
  c.standardize_y = in.get_bool("model", "standardize_y", true);

  c.n_iters = static_cast<int>(in.get_int("train", "n_iters", 2000));
  c.batch_size = static_cast<int>(in.get_int("train", "batch_size", 0));
  c.adam.lr = in.get_num("train", "lr", 0.01);
  c.adam.beta1 = in.get_num("train", "beta1", 0.9);
  c.adam.beta2 = in.get_num("train", "beta2", 0.999);
  c.adam.eps = in.get_num("train", "adam_eps", 1e-8);
  c.nat_grad_step = in.get_num("train", "nat_grad_step", 0.1);
  c.nat_grad_warmup_start = in.get_num("train", "nat_grad_warmup_start", 0.01);
  c.nat_grad_warmup_iters =
      static_cast<int>(in.get_int("train", "nat_grad_warmup_iters", 100));
  c.T = static_cast<int>(in.get_int("train", "T", 1));
  c.S = static_cast<int>(in.get_int("train", "S", 1));
  c.seed = static_cast<std::uint64_t>(in.get_int("train", "seed", 1));
  c.alpha_mode =
      alpha_mode_from_name(in.get_str("train", "alpha_mode", "estimated"));
  c.alpha_init_m = in.get_num("train", "alpha_init_m", 3.0);
  c.alpha_init_s = in.get_num("train", "alpha_init_s", 1.0);
  c.alpha_prior_mean = in.get_num("train", "alpha_prior_mean", 3.5);
  c.alpha_prior_var = in.get_num("train", "alpha_prior_var", 1.0);
  c.alpha_value = in.get_num("train", "alpha_value", 1.0);
  c.eval_every = static_cast<int>(in.get_int("train", "eval_every", 50));

  r.set_int("model", "n_layers", c.n_layers);
  r.set_int("model", "n_inducing", c.n_inducing);
  r.set_num("model", "nu", c.nu);
  r.set_num("model", "sigma2_init", c.sigma2_init);
  r.set_num("model", "lambda_init", c.lambda_init);
  r.set_num("model", "noise_var_init", c.noise_init);
  r.set_bool("model", "learn_noise", c.learn_noise);
  r.set_bool("model", "standardize_y", c.standardize_y);
  r.set_int("train", "n_iters", c.n_iters);
  r.set_int("train", "batch_size", c.batch_size);
  r.set_num("train", "lr", c.adam.lr);
  r.set_num("train", "beta1", c.adam.beta1);
  r.set_num("train", "beta2", c.adam.beta2);
  r.set_num("train", "adam_eps", c.adam.eps);
  r.set_num("train", "nat_grad_step", c.nat_grad_step);
  r.set_num("train", "nat_grad_warmup_start", c.nat_grad_warmup_start);
  r.set_int("train", "nat_grad_warmup_iters", c.nat_grad_warmup_iters);
  r.set_int("train", "T", c.T);
  r.set_int("train", "S", c.S);
  r.set_int("train", "seed", static_cast<long>(c.seed));
  r.set("train", "alpha_mode", alpha_mode_name(c.alpha_mode));
  r.set_num("train", "alpha_init_m", c.alpha_init_m);
  r.set_num("train", "alpha_init_s", c.alpha_init_s);
  r.set_num("train", "alpha_prior_mean", c.alpha_prior_mean);
  r.set_num("train", "alpha_prior_var", c.alpha_prior_var);
  r.set_num("train", "alpha_value", c.alpha_value);
  r.set_int("train", "eval_every", c.eval_every);

  if (n_holdout > 0) {
    auto [tr, ho] = holdout_split(ds, n_holdout, c.seed, n_holdout_nonzero);
    s.data = std::move(tr);
    s.holdout = std::move(ho);
    s.has_holdout = true;
  } else {
    s.data = std::move(ds);
  }
  return s;
}

void write_predictions_csv(const std::string& path, const MatrixXd& X_raw,
                           const std::vector<std::string>& names,
                           const PredictiveSummary& sum) {
  std::ostringstream os;
  os.precision(17);
  for (Eigen::Index j = 0; j < X_raw.cols(); ++j) {
    os << (j < static_cast<Eigen::Index>(names.size())
               ? names[j]
               : "x" + std::to_string(j + 1))
       << ',';
  }
  os << "mean,var,lo95,hi95\n";
  for (Eigen::Index i = 0; i < X_raw.rows(); ++i) {
    for (Eigen::Index j = 0; j < X_raw.cols(); ++j) os << X_raw(i, j) << ',';
    os << sum.mean[i] << ',' << sum.variance[i] << ',' << sum.lower95[i] << ','
       << sum.upper95[i] << '\n';
  }
  write_text_file(path, os.str());
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const Config in = Config::parse_file(config_path);
  const std::string cfg_dir = fs::path(config_path).parent_path().string();
  TrainSetup s = prepare_training(in, cfg_dir);
  fs::create_directories(out_dir);

  TrainTrace trace;
  DgpModel model;
  try {
    model = train(s.data.X, s.data.y, s.cfg, trace);
  } catch (...) {
    write_text_file((fs::path(out_dir) / "trace.csv").string(),
                    trace_csv(trace));
    throw;
  }
  model.scaling = s.data.scaling;

  save_model(model, (fs::path(out_dir) / "model.json").string());
  write_text_file((fs::path(out_dir) / "trace.csv").string(),
                  trace_csv(trace));
  write_text_file((fs::path(out_dir) / "config_resolved.toml").string(),
                  s.resolved.dump());
  if (s.has_holdout) {
    save_dataset_csv(s.holdout, (fs::path(out_dir) / "holdout.csv").string());
  }
  std::cout << "model written to " << (fs::path(out_dir) / "model.json").string()
            << "\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& inputs_path,
                int R, std::uint64_t seed, bool include_noise, int threads,
                const std::string& out_path) {
  const DgpModel model = load_model(model_path);
  std::vector<std::string> names;
  MatrixXd X_raw = load_csv_matrix(inputs_path, &names);

  // Drop a trailing target column if the file carries one.
  if (X_raw.cols() == model.input_dim + 1 && !names.empty() &&
      (names.back() == "y" || names.back() == "target")) {
    names.pop_back();
    X_raw = X_raw.leftCols(model.input_dim).eval();
  }
  if (X_raw.cols() != model.input_dim) {
    throw DimMismatch("predict: model expects " +
                      std::to_string(model.input_dim) + " input columns, got " +
                      std::to_string(X_raw.cols()));
  }
  const MatrixXd X = apply_scaling(X_raw, model.scaling);
  const MatrixXd samples = predict_samples(X, model, R, seed, threads,
                                           include_noise);
  const PredictiveSummary sum = summarize(samples, 0.95);
  write_predictions_csv(out_path, X_raw, names, sum);
  std::cout << "predictions written to " << out_path << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& target, const std::string& out_path) {
  std::vector<std::string> pnames;
  const MatrixXd P = load_csv_matrix(pred_path, &pnames);
  int c_mean = -1, c_lo = -1, c_hi = -1;
  for (size_t j = 0; j < pnames.size(); ++j) {
    if (pnames[j] == "mean") c_mean = static_cast<int>(j);
    if (pnames[j] == "lo95") c_lo = static_cast<int>(j);
    if (pnames[j] == "hi95") c_hi = static_cast<int>(j);
  }
  if (c_mean < 0 || c_lo < 0 || c_hi < 0) {
    throw SchemaError("eval: prediction file needs mean/lo95/hi95 columns");
  }

  std::vector<std::string> tnames;
  const MatrixXd T = load_csv_matrix(truth_path, &tnames);
  int c_y = static_cast<int>(T.cols()) - 1;
  for (size_t j = 0; j < tnames.size(); ++j) {
    if (tnames[j] == target) c_y = static_cast<int>(j);
  }
  if (P.rows() != T.rows()) {
    throw DimMismatch("eval: row count mismatch between predictions and truth");
  }

  const VectorXd mean = P.col(c_mean);
  const VectorXd truth = T.col(c_y);
  const double m = mspe(mean, truth);
  const double e = nse(mean, truth);
  const double cp = coverage(P.col(c_lo), P.col(c_hi), truth);

  std::ostringstream report;
  report.precision(10);
  report << "nse = " << e << "\n"
         << "mspe = " << m << "\n"
         << "cp95 = " << cp << "\n";
  std::cout << report.str();
  if (!out_path.empty()) {
    std::ostringstream csv;
    csv.precision(17);
    csv << "nse,mspe,cp95\n" << e << ',' << m << ',' << cp << '\n';
    write_text_file(out_path, csv.str());
    write_text_file(out_path + ".txt", report.str());
  }
  return 0;
}

int cmd_diagnose(const std::string& data_path, const std::string& target,
                 double threshold, std::uint64_t seed,
                 const std::string& out_path) {
  Dataset ds = load_csv(data_path, target);
  ds = scale_unit_cube(ds);
  DiagnoseOptions opt;
  opt.threshold = threshold;
  opt.seed = seed;
  const DiagnoseReport rep = diagnose_stationarity(ds.X, ds.y, opt);
  std::cout << rep.to_text();
  if (!out_path.empty()) write_text_file(out_path, rep.to_text());
  return 0;
}

int cmd_simulate(const std::string& kind, int n_points, int grid_k, int reps,
                 std::uint64_t seed, const std::string& design,
                 const std::string& alphas_csv, const std::string& lambdas_csv,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (kind == "step1d") {
    Dataset ds;
    ds.feature_names = {"x"};
    ds.target_name = "y";
    ds.X.resize(n_points, 1);
    ds.y.resize(n_points);
    Rng rng(seed, 21);
    for (int i = 0; i < n_points; ++i) {
      const double x = design == "random"
                           ? rng.uniform()
                           : static_cast<double>(i) / (n_points - 1);
      ds.X(i, 0) = x;
      ds.y[i] = step1d(x);
    }
    const std::string path = (fs::path(out_dir) / "step1d.csv").string();
    save_dataset_csv(ds, path);
    std::cout << "dataset written to " << path << "\n";
    return 0;
  }
  if (kind == "piecewise2d") {
    const MatrixXd G = grid_design(grid_k, 2);
    Dataset ds;
    ds.feature_names = {"x1", "x2"};
    ds.target_name = "y";
    ds.X = G;
    ds.y.resize(G.rows());
    for (Eigen::Index i = 0; i < G.rows(); ++i) {
      ds.y[i] = piecewise2d(G(i, 0), G(i, 1));
    }
    const std::string path = (fs::path(out_dir) / "piecewise2d.csv").string();
    save_dataset_csv(ds, path);
    std::cout << "dataset written to " << path << "\n";
    return 0;
  }
  if (kind == "dgp-prior") {
    auto parse_list = [](const std::string& text) {
      std::vector<double> out;
      std::stringstream ss(text);
      std::string tok;
      while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
      return out;
    };
    const std::vector<double> alphas = parse_list(alphas_csv);
    const std::vector<double> lambdas = parse_list(lambdas_csv);
    VectorXd grid(n_points);
    for (int i = 0; i < n_points; ++i) {
      grid[i] = static_cast<double>(i) / (n_points - 1);
    }
    std::ostringstream os;
    os.precision(10);
    os << "alpha,lambda,mean_score\n";
    for (double lam : lambdas) {
      for (double al : alphas) {
        double acc = 0.0;
        for (int r = 0; r < reps; ++r) {
          Rng rng(seed, 1000003ull * r + std::hash<std::string>{}(
                                             std::to_string(al) + "/" +
                                             std::to_string(lam)));
          const VectorXd f = dgp_prior_realization(7, grid, al, lam, rng);
          acc += smoothness_score(f, grid);
        }
        os << al << ',' << lam << ',' << acc / reps << '\n';
      }
    }
    const std::string path = (fs::path(out_dir) / "smoothness_scores.csv").string();
    write_text_file(path, os.str());
    std::cout << "score table written to " << path << "\n";
    return 0;
  }
  throw DomainError("simulate: unknown kind '" + kind +
                    "' (expected step1d|piecewise2d|dgp-prior)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep Gaussian process emulator for computer experiments"};
  app.require_subcommand(1);

  // train
  std::string config_path, out_dir = "out";
  CLI::App* train_cmd = app.add_subcommand("train", "fit a model from a config");
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--out", out_dir, "output directory");

  // predict
  std::string model_path, inputs_path, pred_out = "predictions.csv";
  int R = 5000;
  std::uint64_t seed = 1;
  bool include_noise = false;
  int threads = 1;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "posterior-predictive sampling");
  predict_cmd->add_option("--model", model_path, "model JSON")->required();
  predict_cmd->add_option("--inputs", inputs_path, "inputs CSV")->required();
  predict_cmd->add_option("--samples", R, "number of posterior samples R");
  predict_cmd->add_option("--seed", seed, "RNG seed");
  predict_cmd->add_flag("--include-noise", include_noise,
                        "add observation noise to samples");
  predict_cmd->add_option("--threads", threads, "worker threads");
  predict_cmd->add_option("--out", pred_out, "output CSV path");

  // eval
  std::string eval_pred, eval_truth, eval_target = "y", eval_out;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions");
  eval_cmd->add_option("--pred", eval_pred, "predictions CSV")->required();
  eval_cmd->add_option("--truth", eval_truth, "truth CSV")->required();
  eval_cmd->add_option("--target", eval_target, "truth column name");
  eval_cmd->add_option("--out", eval_out, "metrics CSV path");

  // diagnose
  std::string diag_data, diag_target = "y", diag_out;
  double diag_threshold = 0.05;
  std::uint64_t diag_seed = 1;
  CLI::App* diag_cmd =
      app.add_subcommand("diagnose", "stationarity screening");
  diag_cmd->add_option("--data", diag_data, "data CSV")->required();
  diag_cmd->add_option("--target", diag_target, "target column name");
  diag_cmd->add_option("--threshold", diag_threshold, "flag threshold");
  diag_cmd->add_option("--seed", diag_seed, "RNG seed");
  diag_cmd->add_option("--out", diag_out, "report path");

  // simulate
  std::string sim_kind, sim_design = "grid", sim_out = "out";
  std::string sim_alphas = "0.1,1,2,3", sim_lambdas = "0.1,0.5,1,2";
  int sim_n = 200, sim_grid_k = 25, sim_reps = 100;
  std::uint64_t sim_seed = 1;
  CLI::App* sim_cmd = app.add_subcommand("simulate", "synthetic generators");
  sim_cmd->add_option("--kind", sim_kind, "step1d|piecewise2d|dgp-prior")
      ->required();
  sim_cmd->add_option("--n", sim_n, "points (step1d size / dgp-prior grid)");
  sim_cmd->add_option("--grid-k", sim_grid_k, "grid points per axis");
  sim_cmd->add_option("--reps", sim_reps, "realizations per cell");
  sim_cmd->add_option("--seed", sim_seed, "RNG seed");
  sim_cmd->add_option("--design", sim_design, "grid|random (step1d)");
  sim_cmd->add_option("--alphas", sim_alphas, "comma list (dgp-prior)");
  sim_cmd->add_option("--lambdas", sim_lambdas, "comma list (dgp-prior)");
  sim_cmd->add_option("--out", sim_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(config_path, out_dir);
    if (*predict_cmd) {
      return cmd_predict(model_path, inputs_path, R, seed, include_noise,
                         threads, pred_out);
    }
    if (*eval_cmd) return cmd_eval(eval_pred, eval_truth, eval_target, eval_out);
    if (*diag_cmd) {
      return cmd_diagnose(diag_data, diag_target, diag_threshold, diag_seed,
                          diag_out);
    }
    if (*sim_cmd) {
      return cmd_simulate(sim_kind, sim_n, sim_grid_k, sim_reps, sim_seed,
                          sim_design, sim_alphas, sim_lambdas, sim_out);
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
