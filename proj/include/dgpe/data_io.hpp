#pragma once

#include <string>
#include <vector>

#include "dgpe/model.hpp"

namespace dgpe {

struct Dataset {
  MatrixXd X;
  VectorXd y;
  std::vector<std::string> feature_names;
  std::string target_name;
  InputScaling scaling;  // populated by scale_unit_cube

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
};

/// Loads a header-carrying CSV. All non-target columns become features.
/// An "NA" cell in the target parses as 0 when na_target_as_zero is set;
/// every other non-finite or unparsable cell fails with the offending row
/// numbers in the message.
Dataset load_csv(const std::string& path, const std::string& target_column,
                 bool na_target_as_zero = false);

/// Loads a CSV of prediction inputs (no target column required).
MatrixXd load_csv_matrix(const std::string& path,
                         std::vector<std::string>* names = nullptr);

/// Affine per-column map onto [0,1]; the record is retained on the dataset
/// so prediction inputs can be pushed through the same map.
Dataset scale_unit_cube(const Dataset& ds);

/// Applies a stored scaling record to new inputs.
MatrixXd apply_scaling(const MatrixXd& X, const InputScaling& sc);

/// Deterministic random holdout. With stratification, the holdout contains
/// exactly n_hold_nonzero rows whose response is non-zero.
std::pair<Dataset, Dataset> holdout_split(const Dataset& ds,
                                          Eigen::Index n_hold,
                                          std::uint64_t seed,
                                          Eigen::Index n_hold_nonzero = -1);

/// Model persistence (self-describing JSON, full double precision).
std::string model_to_json(const DgpModel& model);
DgpModel model_from_json(const std::string& text);
void save_model(const DgpModel& model, const std::string& path);
DgpModel load_model(const std::string& path);

/// Writes a dataset back out as CSV with a one-line header.
void save_dataset_csv(const Dataset& ds, const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace dgpe
