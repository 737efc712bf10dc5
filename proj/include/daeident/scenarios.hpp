#pragma once

// Shipping model fixtures: the exothermic reactor, the constrained
// pendulum, and the 4-state linear descriptor family, each with named
// sensor choices, parameter sets, and the classifications they are
// expected to reproduce.  Fixtures are ordinary model files; the loader
// uses the same parser as the CLI.

#include <map>
#include <string>
#include <vector>

#include "daeident/model_io.hpp"
#include "daeident/sim.hpp"

namespace daeident {

enum class ScenarioKind { Index1, Pendulum, Linear };

struct ThetaSet {
  std::string name;
  std::vector<std::string> specs;  // parameter names, or block/entry specs for linear models
};

struct ExpectedLabel {
  std::string theta_set;
  std::string sensor;  // empty for linear scenarios
  std::string region;  // "all" or "post_transient"
  std::string label;   // "identifiable", "unidentifiable", "mixed"
  std::string provenance;
};

struct Scenario {
  std::string name;
  ScenarioKind kind = ScenarioKind::Index1;
  LoadedModel model;
  double t0 = 0.0, t1 = 10.0, dt = 1e-3;
  std::map<std::string, std::vector<std::string>> sensors;
  std::string default_sensor;
  std::vector<ThetaSet> theta_sets;
  std::vector<ExpectedLabel> expected;
  double phi0 = 0.0, omega0 = 0.0;       // pendulum release
  Eigen::VectorXd linear_x1_0;           // differential initial values

  const ThetaSet& theta_set(const std::string& name) const;

  // Copy of the model with the named sensor's outputs.
  DaeModel dae_with_sensor(const std::string& sensor) const;
  LinearDae linear_with_theta(const ThetaSet& ts) const;
  PendulumParams pendulum_params() const;
};

// Fixture directory: IDENT_MODELS_DIR, then the build-time default, then
// ./models.
std::string models_directory();

const std::vector<std::string>& scenario_names();

Scenario load_scenario(const std::string& name);

// True parameter values in the order of the given names.
Eigen::VectorXd theta_values(const DaeModel& m, const std::vector<std::string>& names);

}  // namespace daeident
