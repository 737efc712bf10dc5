#pragma once

// Model file handling.  Models are JSON documents; nonlinear models carry
// expression strings, linear models carry matrix literals or paths to CSV
// matrix files (resolved relative to the model file).  Unknown top-level
// keys are ignored so the same files can carry scenario metadata.

#include <optional>
#include <string>

#include "daeident/linear.hpp"
#include "daeident/model.hpp"
#include "daeident/ranktest.hpp"
#include "daeident/sim.hpp"

#include "json.hpp"

namespace daeident {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedModel {
  std::optional<DaeModel> dae;
  std::optional<LinearDae> linear;
  nlohmann::json raw;

  bool is_linear() const { return linear.has_value(); }
};

LoadedModel load_model_file(const std::string& path);
LoadedModel parse_model_json(const nlohmann::json& j, const std::string& base_dir = ".");

DaeModel parse_dae_json(const nlohmann::json& j);
LinearDae parse_linear_json(const nlohmann::json& j, const std::string& base_dir = ".");

// Free-entry selection for linear models: a list of block names ("A",
// "A12", ...), a list of entry names ("a12", ...), a boolean matrix, or the
// string "nonzero".
std::vector<std::pair<int, int>> parse_theta_spec(const LinearDae& d, const nlohmann::json& spec);

// Serialization with 17-significant-digit numeric literals.
std::string save_model_json(const DaeModel& m);

std::string format_numeric(double v);  // %.17g

Eigen::MatrixXd load_csv_matrix(const std::string& path);

nlohmann::json rank_report_json(const RankReport& r, bool svd_audit = false);

// Evaluation point files: {"x": [...]} or {"x1": [...]}, optional "theta"
// (array) and "time".
struct PointFile {
  std::optional<Eigen::VectorXd> x;   // full state
  std::optional<Eigen::VectorXd> x1;  // differential part only
  std::optional<Eigen::VectorXd> theta;
  double time = 0.0;
};
PointFile load_point_file(const std::string& path);

void write_trajectory_csv(const Trajectory& traj, const std::vector<std::string>& state_names,
                          const std::string& path);
void write_trajectory_meta(const Trajectory& traj, const SimOptions& opts,
                           const std::string& path);

}  // namespace daeident
