#include "dgpe/data_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace dgpe {

namespace {

using nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim whitespace and CR
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  char* end = nullptr;
  v = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

json matrix_to_json(const MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index r = static_cast<Eigen::Index>(j.size());
  if (r == 0) return MatrixXd(0, 0);
  const Eigen::Index c = static_cast<Eigen::Index>(j[0].size());
  MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index k = 0; k < c; ++k) M(i, k) = j[i][k].get<double>();
  }
  return M;
}

json vector_to_json(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& target_column,
                 bool na_target_as_zero) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv: empty file " + path);
  const std::vector<std::string> header = split_csv_line(line);
  int target_idx = -1;
  for (size_t j = 0; j < header.size(); ++j) {
    if (header[j] == target_column) target_idx = static_cast<int>(j);
  }
  if (target_idx < 0) {
    throw SchemaError("load_csv: target column '" + target_column +
                      "' not found in " + path);
  }

  std::vector<std::vector<double>> rows;
  std::vector<long> bad_rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("load_csv: row " + std::to_string(lineno) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(header.size()));
    }
    std::vector<double> vals(cells.size());
    bool ok = true;
    for (size_t j = 0; j < cells.size(); ++j) {
      double v = 0.0;
      if (static_cast<int>(j) == target_idx && na_target_as_zero &&
          (cells[j] == "NA" || cells[j] == "na" || cells[j] == "NaN")) {
        v = 0.0;
      } else if (!parse_double(cells[j], v) || !std::isfinite(v)) {
        ok = false;
      }
      vals[j] = v;
    }
    if (!ok) {
      bad_rows.push_back(lineno);
      continue;
    }
    rows.push_back(std::move(vals));
  }
  if (!bad_rows.empty()) {
    std::string msg = "load_csv: non-finite or unparsable values in rows";
    for (long r : bad_rows) msg += " " + std::to_string(r);
    throw ParseError(msg);
  }
  if (rows.empty()) throw ParseError("load_csv: no data rows in " + path);

  Dataset ds;
  ds.target_name = target_column;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index d = static_cast<Eigen::Index>(header.size()) - 1;
  ds.X.resize(n, d);
  ds.y.resize(n);
  for (size_t j = 0; j < header.size(); ++j) {
    if (static_cast<int>(j) != target_idx) ds.feature_names.push_back(header[j]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index c = 0;
    for (size_t j = 0; j < header.size(); ++j) {
      if (static_cast<int>(j) == target_idx) {
        ds.y[i] = rows[i][j];
      } else {
        ds.X(i, c++) = rows[i][j];
      }
    }
  }
  return ds;
}

MatrixXd load_csv_matrix(const std::string& path,
                         std::vector<std::string>* names) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_csv_matrix: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv_matrix: empty file");
  const std::vector<std::string> header = split_csv_line(line);
  if (names) *names = header;
  std::vector<std::vector<double>> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("load_csv_matrix: ragged row " + std::to_string(lineno));
    }
    std::vector<double> vals(cells.size());
    for (size_t j = 0; j < cells.size(); ++j) {
      if (!parse_double(cells[j], vals[j]) || !std::isfinite(vals[j])) {
        throw ParseError("load_csv_matrix: bad value in row " +
                         std::to_string(lineno));
      }
    }
    rows.push_back(std::move(vals));
  }
  MatrixXd M(static_cast<Eigen::Index>(rows.size()),
             static_cast<Eigen::Index>(header.size()));
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) M(i, j) = rows[i][j];
  }
  return M;
}

Dataset scale_unit_cube(const Dataset& ds) {
  Dataset out = ds;
  const Eigen::Index d = ds.dim();
  out.scaling.names = ds.feature_names;
  out.scaling.mins.resize(d);
  out.scaling.maxs.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double lo = ds.X.col(j).minCoeff();
    const double hi = ds.X.col(j).maxCoeff();
    if (!(hi > lo)) {
      throw DegenerateColumn("scale_unit_cube: column " + std::to_string(j) +
                             " is constant");
    }
    out.scaling.mins[j] = lo;
    out.scaling.maxs[j] = hi;
    out.X.col(j) = (ds.X.col(j).array() - lo) / (hi - lo);
  }
  return out;
}

MatrixXd apply_scaling(const MatrixXd& X, const InputScaling& sc) {
  if (sc.empty()) return X;
  if (X.cols() != sc.mins.size()) {
    throw DimMismatch("apply_scaling: dimension mismatch");
  }
  MatrixXd out = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    out.col(j) =
        (X.col(j).array() - sc.mins[j]) / (sc.maxs[j] - sc.mins[j]);
  }
  return out;
}

std::pair<Dataset, Dataset> holdout_split(const Dataset& ds,
                                          Eigen::Index n_hold,
                                          std::uint64_t seed,
                                          Eigen::Index n_hold_nonzero) {
  const Eigen::Index n = ds.n();
  if (n_hold < 0 || n_hold >= n) {
    throw DomainError("holdout_split: n_hold must be in [0, n_S)");
  }
  Rng rng(seed, 3);
  std::vector<Eigen::Index> hold_idx;
  if (n_hold_nonzero >= 0) {
    if (n_hold_nonzero > n_hold) {
      throw DomainError("holdout_split: n_hold_nonzero exceeds n_hold");
    }
    std::vector<Eigen::Index> nz, z;
    for (Eigen::Index i = 0; i < n; ++i) {
      (ds.y[i] != 0.0 ? nz : z).push_back(i);
    }
    const Eigen::Index n_zero_hold = n_hold - n_hold_nonzero;
    if (static_cast<Eigen::Index>(nz.size()) < n_hold_nonzero ||
        static_cast<Eigen::Index>(z.size()) < n_zero_hold) {
      throw DomainError("holdout_split: stratum too small");
    }
    auto sample_from = [&](std::vector<Eigen::Index>& pool, Eigen::Index k) {
      for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index j =
            i + static_cast<Eigen::Index>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
        hold_idx.push_back(pool[i]);
      }
    };
    sample_from(nz, n_hold_nonzero);
    sample_from(z, n_zero_hold);
  } else {
    std::vector<Eigen::Index> all(n);
    std::iota(all.begin(), all.end(), 0);
    for (Eigen::Index i = 0; i < n_hold; ++i) {
      const Eigen::Index j =
          i + static_cast<Eigen::Index>(rng.uniform_int(n - i));
      std::swap(all[i], all[j]);
      hold_idx.push_back(all[i]);
    }
  }
  std::vector<bool> held(n, false);
  for (Eigen::Index i : hold_idx) held[static_cast<size_t>(i)] = true;

  Dataset train, hold;
  train.feature_names = hold.feature_names = ds.feature_names;
  train.target_name = hold.target_name = ds.target_name;
  train.scaling = hold.scaling = ds.scaling;
  train.X.resize(n - n_hold, ds.dim());
  train.y.resize(n - n_hold);
  hold.X.resize(n_hold, ds.dim());
  hold.y.resize(n_hold);
  Eigen::Index ti = 0, hi = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (held[static_cast<size_t>(i)]) {
      hold.X.row(hi) = ds.X.row(i);
      hold.y[hi++] = ds.y[i];
    } else {
      train.X.row(ti) = ds.X.row(i);
      train.y[ti++] = ds.y[i];
    }
  }
  return {std::move(train), std::move(hold)};
}

std::string model_to_json(const DgpModel& model) {
  model.validate();
  json j;
  j["format"] = "dgpemu-model";
  j["format_version"] = 1;
  j["input_dim"] = model.input_dim;
  j["n_layers"] = model.n_layers;
  j["alpha_mode"] = alpha_mode_name(model.alpha_mode);
  j["alpha"] = {{"m_alpha", model.alpha.m_alpha},
                {"s_alpha", model.alpha.s_alpha},
                {"prior_mean", model.alpha.prior_mean},
                {"prior_var", model.alpha.prior_var}};
  j["alpha_value"] = model.alpha_value;
  j["noise_var"] = model.noise_var;
  j["y_mean"] = model.y_mean;
  j["y_scale"] = model.y_scale;
  if (!model.scaling.empty()) {
    j["input_scaling"] = {{"names", model.scaling.names},
                          {"mins", vector_to_json(model.scaling.mins)},
                          {"maxs", vector_to_json(model.scaling.maxs)}};
  }
  json layers = json::array();
  for (const LayerState& ly : model.layers) {
    json jl;
    jl["Z"] = matrix_to_json(ly.Z);
    jl["m"] = vector_to_json(ly.m_vec);
    jl["s_factor"] = matrix_to_json(ly.s_factor);
    if (ly.delta_Z.size() > 0) jl["delta"] = vector_to_json(ly.delta_Z);
    jl["nu"] = ly.kernel.nu;
    jl["lambda"] = ly.kernel.lambda;
    jl["sigma2"] = ly.kernel.sigma2;
    layers.push_back(std::move(jl));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

DgpModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("model_from_json: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "dgpemu-model") {
    throw SchemaError("model_from_json: not a dgpemu model document");
  }
  if (j.value("format_version", 0) != 1) {
    throw SchemaError("model_from_json: unsupported format_version");
  }
  DgpModel model;
  model.input_dim = j["input_dim"].get<int>();
  model.n_layers = j["n_layers"].get<int>();
  model.alpha_mode = alpha_mode_from_name(j["alpha_mode"].get<std::string>());
  model.alpha.m_alpha = j["alpha"]["m_alpha"].get<double>();
  model.alpha.s_alpha = j["alpha"]["s_alpha"].get<double>();
  model.alpha.prior_mean = j["alpha"]["prior_mean"].get<double>();
  model.alpha.prior_var = j["alpha"]["prior_var"].get<double>();
  model.alpha_value = j["alpha_value"].get<double>();
  model.noise_var = j["noise_var"].get<double>();
  model.y_mean = j["y_mean"].get<double>();
  model.y_scale = j["y_scale"].get<double>();
  if (j.contains("input_scaling")) {
    model.scaling.names =
        j["input_scaling"]["names"].get<std::vector<std::string>>();
    model.scaling.mins = vector_from_json(j["input_scaling"]["mins"]);
    model.scaling.maxs = vector_from_json(j["input_scaling"]["maxs"]);
  }
  for (const json& jl : j["layers"]) {
    LayerState ly;
    ly.Z = matrix_from_json(jl["Z"]);
    ly.m_vec = vector_from_json(jl["m"]);
    ly.s_factor = matrix_from_json(jl["s_factor"]);
    if (jl.contains("delta")) ly.delta_Z = vector_from_json(jl["delta"]);
    ly.kernel.nu = jl["nu"].get<double>();
    ly.kernel.lambda = jl["lambda"].get<double>();
    ly.kernel.sigma2 = jl["sigma2"].get<double>();
    model.layers.push_back(std::move(ly));
  }
  model.validate();
  return model;
}

void save_model(const DgpModel& model, const std::string& path) {
  write_text_file(path, model_to_json(model));
}

DgpModel load_model(const std::string& path) {
  return model_from_json(read_text_file(path));
}

void save_dataset_csv(const Dataset& ds, const std::string& path) {
  std::ostringstream os;
  os.precision(17);
  for (const std::string& nm : ds.feature_names) os << nm << ',';
  os << (ds.target_name.empty() ? "y" : ds.target_name) << '\n';
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.dim(); ++j) os << ds.X(i, j) << ',';
    os << ds.y[i] << '\n';
  }
  write_text_file(path, os.str());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << text;
  if (!out) throw ParseError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dgpe
