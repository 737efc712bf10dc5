#include "daeident/scenarios.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>

namespace daeident {

using nlohmann::json;

std::string models_directory() {
  if (const char* env = std::getenv("IDENT_MODELS_DIR"); env && *env) return env;
#ifdef DAEIDENT_DEFAULT_MODELS_DIR
  if (std::filesystem::is_directory(DAEIDENT_DEFAULT_MODELS_DIR))
    return DAEIDENT_DEFAULT_MODELS_DIR;
#endif
  return "models";
}

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names = {"reactor", "pendulum", "linear4",
                                                 "linear4-sparse", "linear4-ode"};
  return names;
}

const ThetaSet& Scenario::theta_set(const std::string& set_name) const {
  for (const ThetaSet& ts : theta_sets)
    if (ts.name == set_name) return ts;
  throw IoError("scenario '" + name + "' has no parameter set named '" + set_name + "'");
}

DaeModel Scenario::dae_with_sensor(const std::string& sensor) const {
  if (!model.dae) throw IoError("scenario '" + name + "' is not a nonlinear model");
  const std::string& key = sensor.empty() ? default_sensor : sensor;
  DaeModel m = *model.dae;
  if (key.empty()) return m;
  auto it = sensors.find(key);
  if (it == sensors.end()) throw IoError("scenario '" + name + "' has no sensor '" + key + "'");
  m.outputs.clear();
  for (const std::string& text : it->second)
    m.outputs.push_back(parse_expression(text, *m.symbols));
  return m;
}

LinearDae Scenario::linear_with_theta(const ThetaSet& ts) const {
  if (!model.linear) throw IoError("scenario '" + name + "' is not a linear model");
  LinearDae d = *model.linear;
  d.theta = parse_theta_spec(d, json(ts.specs));
  return d;
}

PendulumParams Scenario::pendulum_params() const {
  if (!model.dae) throw IoError("scenario '" + name + "' is not a nonlinear model");
  const DaeModel& m = *model.dae;
  auto value = [&](const char* pname) {
    auto id = m.symbols->lookup(pname);
    if (!id || !m.parameter_values.count(*id))
      throw IoError("pendulum scenario lacks parameter '" + std::string(pname) + "'");
    return m.parameter_values.at(*id);
  };
  PendulumParams p;
  p.mass = value("m");
  p.gravity = value("g");
  p.length = value("L");
  return p;
}

Scenario load_scenario(const std::string& name) {
  const auto& names = scenario_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw IoError("unknown scenario '" + name + "'");
  std::string path = (std::filesystem::path(models_directory()) / (name + ".json")).string();
  Scenario sc;
  sc.name = name;
  sc.model = load_model_file(path);

  const json& raw = sc.model.raw;
  if (!raw.contains("scenario")) throw IoError("fixture '" + path + "' lacks scenario metadata");
  const json& s = raw.at("scenario");

  std::string kind = s.value("kind", "index1");
  if (kind == "index1") sc.kind = ScenarioKind::Index1;
  else if (kind == "pendulum") sc.kind = ScenarioKind::Pendulum;
  else if (kind == "linear") sc.kind = ScenarioKind::Linear;
  else throw IoError("unknown scenario kind '" + kind + "'");

  if (s.contains("t_span")) {
    sc.t0 = s.at("t_span")[0].get<double>();
    sc.t1 = s.at("t_span")[1].get<double>();
  }
  sc.dt = s.value("dt", 1e-3);

  if (s.contains("sensors")) {
    for (const auto& [key, value] : s.at("sensors").items()) {
      std::vector<std::string> exprs;
      for (const auto& e : value) exprs.push_back(e.get<std::string>());
      sc.sensors[key] = std::move(exprs);
    }
  }
  sc.default_sensor = s.value("default_sensor", "");

  if (s.contains("theta_sets")) {
    for (const auto& [key, value] : s.at("theta_sets").items()) {
      ThetaSet ts;
      ts.name = key;
      for (const auto& e : value) ts.specs.push_back(e.get<std::string>());
      sc.theta_sets.push_back(std::move(ts));
    }
  }

  if (s.contains("expected")) {
    for (const auto& e : s.at("expected")) {
      ExpectedLabel lbl;
      lbl.theta_set = e.value("theta_set", "");
      lbl.sensor = e.value("sensor", "");
      lbl.region = e.value("region", "all");
      lbl.label = e.value("label", "");
      lbl.provenance = e.value("provenance", "");
      sc.expected.push_back(std::move(lbl));
    }
  }

  if (s.contains("pendulum")) {
    sc.phi0 = s.at("pendulum").value("phi0", 0.0);
    sc.omega0 = s.at("pendulum").value("omega0", 0.0);
  }
  if (s.contains("x1_0")) {
    const json& v = s.at("x1_0");
    sc.linear_x1_0.resize(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
      sc.linear_x1_0[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return sc;
}

Eigen::VectorXd theta_values(const DaeModel& m, const std::vector<std::string>& names) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto id = m.symbols->lookup(names[i]);
    if (!id) throw ModelError("unknown parameter '" + names[i] + "'");
    auto it = m.parameter_values.find(*id);
    if (it == m.parameter_values.end())
      throw ModelError("parameter '" + names[i] + "' has no value");
    v[static_cast<Eigen::Index>(i)] = it->second;
  }
  return v;
}

}  // namespace daeident
