// daeident: local observability and parameter identifiability of DAE/ODE
// models via numerical rank tests on stacked derivative arrays.
//
// Exit codes: 0 condition satisfied, 1 not satisfied, 2 error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "daeident/linear.hpp"
#include "daeident/model_io.hpp"
#include "daeident/scan.hpp"
#include "daeident/scenarios.hpp"
#include "daeident/sim.hpp"
#include "daeident/stack.hpp"

using namespace daeident;
using nlohmann::json;

namespace {

bool is_scenario_name(const std::string& s) {
  const auto& names = scenario_names();
  return std::find(names.begin(), names.end(), s) != names.end();
}

// A model argument is either a file path or a shipped scenario name.
struct ModelArg {
  std::optional<Scenario> scenario;
  LoadedModel model;
};

ModelArg resolve_model(const std::string& arg) {
  ModelArg out;
  if (!std::filesystem::exists(arg) && is_scenario_name(arg)) {
    out.scenario = load_scenario(arg);
    out.model = out.scenario->model;
    return out;
  }
  out.model = load_model_file(arg);
  if (out.model.raw.contains("scenario")) {
    // model files shipped as fixtures still carry their scenario block
    for (const std::string& name : scenario_names()) {
      if (out.model.raw.value("name", "") == name) {
        out.scenario = load_scenario(name);
        break;
      }
    }
  }
  return out;
}

int exit_error(const std::exception& e, const char* type) {
  json j;
  j["error"] = {{"type", type}, {"message", e.what()}};
  std::cout << j.dump(2) << std::endl;
  return 2;
}

std::pair<double, double> parse_span(const std::string& spec) {
  auto colon = spec.find(':');
  if (colon == std::string::npos) throw IoError("time span must be t0:t1");
  return {std::stod(spec.substr(0, colon)), std::stod(spec.substr(colon + 1))};
}

// Derivative arrays for a nonlinear model at a state, scenario-aware (the
// pendulum needs its dedicated closed-form recursion).
std::vector<Eigen::VectorXd> derivatives_for(const ModelArg& ma, const DaeModel& model,
                                             const Eigen::VectorXd& x, int sigma) {
  if (ma.scenario && ma.scenario->kind == ScenarioKind::Pendulum) {
    PendulumParams p = ma.scenario->pendulum_params();
    PendulumDerivatives pd(p);
    return pd.generate(PendulumDerivatives::angle_of(x),
                       PendulumDerivatives::angular_velocity_of(x, p.length), sigma);
  }
  return consistent_derivatives(model, x, sigma);
}

int run_check(const std::string& model_arg, std::vector<std::string> theta,
              const std::string& sensor, const std::string& point_file, double simulate_to,
              bool use_simulate, int max_order, std::optional<int> mu, std::optional<int> nu,
              bool svd_audit, bool observability, std::optional<double> tol) {
  ModelArg ma = resolve_model(model_arg);
  RankOptions opts;
  opts.max_order = max_order;
  opts.fixed_mu = mu;
  opts.fixed_nu = nu;
  opts.tolerance = tol;
  opts.collect_singular_values = svd_audit;
  if (ma.scenario && ma.scenario->kind == ScenarioKind::Pendulum)
    opts.algebraic_chain_columns = false;

  RankReport report;
  if (ma.model.is_linear()) {
    LinearDae d = *ma.model.linear;
    if (!theta.empty()) d.theta = parse_theta_spec(d, json(theta));
    if (observability) throw IoError("use the `linear` command for linear observability tests");
    if (d.theta.empty()) throw IoError("linear identifiability needs --theta");
    Eigen::VectorXd x1;
    if (!point_file.empty()) {
      PointFile pf = load_point_file(point_file);
      x1 = pf.x1 ? *pf.x1 : *pf.x;
    } else if (ma.scenario && ma.scenario->linear_x1_0.size() > 0) {
      x1 = ma.scenario->linear_x1_0;
    } else {
      throw IoError("no evaluation point: pass --point");
    }
    EvalPoint pt;
    int max_mu = opts.max_order >= 0 ? opts.max_order : d.n() + 1;
    int sigma = (opts.fixed_mu ? *opts.fixed_mu : max_mu) + 1;
    pt.state_derivatives = linear_consistent_derivatives(d, x1, sigma);
    report = opts.fixed_mu ? linear_identifiability(d, pt, *opts.fixed_mu, opts)
                           : linear_identifiability_loop(d, pt, max_mu, opts);
  } else {
    DaeModel model = ma.scenario && (!sensor.empty() || !ma.scenario->default_sensor.empty())
                         ? ma.scenario->dae_with_sensor(sensor)
                         : *ma.model.dae;
    Eigen::VectorXd x;
    double time = 0.0;
    Eigen::VectorXd theta_override;
    if (!point_file.empty()) {
      PointFile pf = load_point_file(point_file);
      if (pf.x) {
        x = *pf.x;
      } else {
        if (!model.has_semi_explicit()) throw IoError("point file needs the full state \"x\"");
        Eigen::VectorXd guess = model.initial_condition.size() == model.n()
                                    ? Eigen::VectorXd(model.initial_condition.tail(model.n2()))
                                    : Eigen::VectorXd::Zero(model.n2());
        x.resize(model.n());
        x.head(model.n1()) = *pf.x1;
        x.tail(model.n2()) = solve_algebraic(model, *pf.x1, guess);
      }
      if (pf.theta) theta_override = *pf.theta;
      time = pf.time;
    } else if (use_simulate) {
      if (ma.scenario && ma.scenario->kind == ScenarioKind::Pendulum) {
        Trajectory traj = simulate_pendulum(ma.scenario->pendulum_params(), ma.scenario->phi0,
                                            ma.scenario->omega0, 0.0, simulate_to, SimOptions{});
        x = traj.states.back();
      } else {
        if (model.initial_condition.size() != model.n())
          throw IoError("--simulate needs a model initial condition");
        Trajectory traj = simulate_index1(model, model.initial_condition, 0.0, simulate_to,
                                          SimOptions{});
        x = traj.states.back();
      }
      time = simulate_to;
    } else if (model.initial_condition.size() == model.n()) {
      x = model.initial_condition;
      if (model.has_semi_explicit() && model.n2() > 0 &&
          !(ma.scenario && ma.scenario->kind == ScenarioKind::Pendulum)) {
        x.tail(model.n2()) =
            solve_algebraic(model, x.head(model.n1()), x.tail(model.n2()));
      }
    } else {
      throw IoError("no evaluation point: pass --point or --simulate");
    }

    int p = static_cast<int>(theta.size());
    int cap = opts.max_order >= 0 ? opts.max_order : model.n() + p;
    int needed = opts.fixed_mu || opts.fixed_nu
                     ? std::max(opts.fixed_mu.value_or(0), opts.fixed_nu.value_or(0)) + 1
                     : cap + 1;
    EvalPoint pt;
    pt.time = time;
    pt.state_derivatives = derivatives_for(ma, model, x, needed);
    if (observability || theta.empty()) {
      ObservabilityChecker checker(model);
      report = checker.check(pt, opts);
    } else {
      IdentifiabilityChecker checker(model, theta);
      pt.theta = theta_override.size() > 0 ? theta_override : theta_values(model, theta);
      report = checker.check(pt, opts);
    }
  }
  std::cout << rank_report_json(report, svd_audit).dump(2) << std::endl;
  return report.satisfied ? 0 : 1;
}

int run_scan(const std::string& model_arg, const std::string& theta_set,
             const std::string& sensor, std::optional<std::string> grid, int subsample, int jobs,
             const std::string& out_csv, const std::string& out_svg, const std::string& mode,
             std::optional<int> linear_mu, int axis_x, int axis_y) {
  ModelArg ma = resolve_model(model_arg);
  if (!ma.scenario) throw IoError("scan needs a scenario fixture (one of the shipped names)");
  ScanOptions opts;
  opts.mode = mode;
  opts.grid = grid;
  opts.subsample = subsample;
  opts.jobs = jobs;
  opts.linear_mu = linear_mu;
  ScanResult result = scan_scenario(*ma.scenario, theta_set, sensor, opts);
  if (!out_csv.empty()) {
    write_scan_csv(result, out_csv);
    write_scan_meta(result, out_csv + ".meta.json");
  }
  if (!out_svg.empty()) write_scan_svg(result, axis_x, axis_y, out_svg);
  json j;
  j["points"] = result.points.size();
  j["satisfied"] = result.satisfied_count();
  j["mode"] = result.mode;
  j["provenance"] = result.provenance;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_simulate(const std::string& model_arg, const std::string& tspan, double dt,
                 const std::string& out_csv, int derivative_order) {
  ModelArg ma = resolve_model(model_arg);
  auto [t0, t1] = parse_span(tspan);
  SimOptions opts;
  opts.dt = dt;
  opts.store_derivative_order = derivative_order;

  Trajectory traj;
  std::vector<std::string> names;
  if (ma.scenario && ma.scenario->kind == ScenarioKind::Pendulum) {
    traj = simulate_pendulum(ma.scenario->pendulum_params(), ma.scenario->phi0,
                             ma.scenario->omega0, t0, t1, opts);
    names = {"x1", "x2", "x3", "x4", "x5"};
  } else if (ma.model.is_linear()) {
    LinearDae d = *ma.model.linear;
    DaeModel m = linear_to_dae(d);
    if (!ma.scenario || ma.scenario->linear_x1_0.size() == 0)
      throw IoError("linear simulation needs the scenario's x1_0");
    Eigen::VectorXd x0 = linear_consistent_state(d, ma.scenario->linear_x1_0);
    traj = simulate_index1(m, x0, t0, t1, opts);
    for (int i = 0; i < d.n(); ++i) names.push_back("x" + std::to_string(i + 1));
  } else {
    DaeModel m = *ma.model.dae;
    if (m.initial_condition.size() != m.n())
      throw IoError("simulation needs a model initial condition");
    traj = simulate_index1(m, m.initial_condition, t0, t1, opts);
    for (SymbolId s : m.states()) names.push_back((*m.symbols)[s].name);
  }
  write_trajectory_csv(traj, names, out_csv);
  write_trajectory_meta(traj, opts, out_csv + ".meta.json");
  json j;
  j["samples"] = traj.times.size();
  j["max_consistency_residual"] = traj.max_residual();
  j["out"] = out_csv;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_linear(const std::string& model_arg, bool pbh, bool kalman, bool block,
               bool preconditions, std::vector<std::string> theta, std::optional<int> mu,
               const std::string& point_file) {
  ModelArg ma = resolve_model(model_arg);
  if (!ma.model.is_linear()) throw IoError("the linear command needs a linear model");
  LinearDae d = *ma.model.linear;
  json j;
  bool any = false;
  int exit_code = 0;
  if (pbh) {
    bool ok = pbh_r_observable(d);
    j["pbh_r_observable"] = ok;
    exit_code = ok ? exit_code : 1;
    any = true;
  }
  if (kalman) {
    bool ok = kalman_observable(d);
    j["kalman_observable"] = ok;
    exit_code = ok ? exit_code : 1;
    any = true;
  }
  if (block) {
    bool ok = block_r_observable(d);
    j["block_r_observable"] = ok;
    exit_code = ok ? exit_code : 1;
    any = true;
  }
  if (preconditions) {
    SemiExplicitStructure s = semiexplicit_structure(d);
    j["index1"] = s.index1;
    j["a21_full_rank"] = s.a21_full_rank;
    any = true;
  }
  if (!theta.empty()) {
    d.theta = parse_theta_spec(d, json(theta));
    Eigen::VectorXd x1;
    if (!point_file.empty()) {
      PointFile pf = load_point_file(point_file);
      x1 = pf.x1 ? *pf.x1 : *pf.x;
    } else if (ma.scenario && ma.scenario->linear_x1_0.size() > 0) {
      x1 = ma.scenario->linear_x1_0;
    } else {
      throw IoError("identifiability needs --point or a scenario x1_0");
    }
    EvalPoint pt;
    int max_mu = mu.value_or(d.n() + 1);
    pt.state_derivatives = linear_consistent_derivatives(d, x1, max_mu + 1);
    RankReport r = mu ? linear_identifiability(d, pt, *mu)
                      : linear_identifiability_loop(d, pt, max_mu);
    j["identifiability"] = rank_report_json(r);
    exit_code = r.satisfied ? exit_code : 1;
    any = true;
  }
  if (!any) throw IoError("pick at least one of --pbh --kalman --block --preconditions --theta");
  std::cout << j.dump(2) << std::endl;
  return exit_code;
}

int run_stack(const std::string& model_arg, int mu, int nu, std::vector<std::string> theta,
              bool dump) {
  ModelArg ma = resolve_model(model_arg);
  DaeModel model = ma.model.is_linear() ? linear_to_dae(*ma.model.linear) : *ma.model.dae;
  DerivativeStack s;
  if (!theta.empty()) {
    AugmentedModel am = augment(model, theta);
    s = build_stack(am, mu, nu);
    model = am.base;
  } else {
    s = build_stack(model, mu, nu);
  }
  json j;
  j["mu"] = s.mu;
  j["nu"] = s.nu;
  j["sigma"] = s.sigma;
  j["residual_rows"] = s.fbar.size();
  j["output_rows"] = s.hbar.size();
  std::cout << j.dump(2) << std::endl;
  if (dump) {
    const SymbolTable& t = *model.symbols;
    for (int k = 0; k <= s.mu; ++k) {
      std::printf("# residual level %d\n", k);
      for (const Expr& e : s.f_level(k)) std::printf("0 = %s\n", to_string(e, t).c_str());
    }
    for (int k = 0; k <= s.nu; ++k) {
      std::printf("# output level %d\n", k);
      for (const Expr& e : s.h_level(k)) std::printf("y(%d) = %s\n", k, to_string(e, t).c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"observability and identifiability tests for DAE models"};
  app.require_subcommand(1);

  // check
  auto* check = app.add_subcommand("check", "rank-condition verdict at one point");
  std::string model_arg, sensor, point_file;
  std::vector<std::string> theta;
  double simulate_to = 0.0;
  bool use_simulate = false, svd_audit = false, observability = false;
  int max_order = -1;
  std::optional<int> mu_opt, nu_opt;
  std::optional<double> tol_opt;
  check->add_option("model", model_arg, "model file or scenario name")->required();
  check->add_option("--theta", theta, "parameters to test (names, or blocks for linear models)");
  check->add_option("--sensor", sensor, "scenario sensor choice");
  check->add_option("--point", point_file, "evaluation point JSON file");
  check->add_option("--simulate", simulate_to, "simulate to this time and test the final state")
      ->check(CLI::NonNegativeNumber)
      ->each([&](const std::string&) { use_simulate = true; });
  check->add_option("--max-order", max_order, "cap on the differentiation order");
  check->add_option("--mu", mu_opt, "fix the residual differentiation order");
  check->add_option("--nu", nu_opt, "fix the output differentiation order");
  check->add_option("--tol", tol_opt, "override the rank tolerance");
  check->add_flag("--svd-audit", svd_audit, "include the singular spectrum in the report");
  check->add_flag("--observability", observability, "test state observability instead");

  // scan
  auto* scan = app.add_subcommand("scan", "classify trajectory or grid points");
  std::string scan_model, scan_theta_set, scan_sensor, scan_csv, scan_svg,
      scan_mode = "identifiability";
  std::optional<std::string> scan_grid;
  int scan_subsample = 1, scan_jobs = 1, axis_x = 0, axis_y = 1;
  std::optional<int> scan_linear_mu;
  scan->add_option("model", scan_model, "scenario name")->required();
  scan->add_option("--theta", scan_theta_set, "scenario parameter-set name");
  scan->add_option("--sensor", scan_sensor, "scenario sensor choice");
  scan->add_option("--grid", scan_grid, "grid spec name=lo:hi:count,...");
  scan->add_option("--subsample", scan_subsample, "keep every k-th trajectory point")
      ->check(CLI::PositiveNumber);
  scan->add_option("--jobs", scan_jobs, "worker threads")->check(CLI::PositiveNumber);
  scan->add_option("--out", scan_csv, "CSV output path");
  scan->add_option("--svg", scan_svg, "SVG plot path");
  scan->add_option("--mode", scan_mode, "identifiability|observability");
  scan->add_option("--mu", scan_linear_mu, "fixed order for linear scans");
  scan->add_option("--axis-x", axis_x, "state index for the SVG x axis");
  scan->add_option("--axis-y", axis_y, "state index for the SVG y axis");

  // simulate
  auto* sim = app.add_subcommand("simulate", "integrate a scenario or model");
  std::string sim_model, sim_tspan = "0:10", sim_csv = "trajectory.csv";
  double sim_dt = 1e-3;
  int sim_derivs = 0;
  sim->add_option("model", sim_model, "model file or scenario name")->required();
  sim->add_option("--tspan", sim_tspan, "time span t0:t1");
  sim->add_option("--dt", sim_dt, "fixed step size")->check(CLI::PositiveNumber);
  sim->add_option("--out", sim_csv, "CSV output path");
  sim->add_option("--derivatives", sim_derivs, "store derivative columns up to this order");

  // linear
  auto* lin = app.add_subcommand("linear", "fast-path checks for linear descriptor systems");
  std::string lin_model, lin_point;
  bool lin_pbh = false, lin_kalman = false, lin_block = false, lin_pre = false;
  std::vector<std::string> lin_theta;
  std::optional<int> lin_mu;
  lin->add_option("model", lin_model, "linear model file or scenario name")->required();
  lin->add_flag("--pbh", lin_pbh, "eigenvalue sweep test");
  lin->add_flag("--kalman", lin_kalman, "Kalman rank test (nonsingular E)");
  lin->add_flag("--block", lin_block, "banded block-matrix test");
  lin->add_flag("--preconditions", lin_pre, "index-1 and coupling-rank structure checks");
  lin->add_option("--theta", lin_theta, "free entries for identifiability");
  lin->add_option("--mu", lin_mu, "fixed order for the identifiability condition");
  lin->add_option("--point", lin_point, "evaluation point JSON file");

  // stack
  auto* stk = app.add_subcommand("stack", "inspect the stacked derivative arrays");
  std::string stk_model;
  int stk_mu = 1, stk_nu = 1;
  std::vector<std::string> stk_theta;
  bool stk_dump = false;
  stk->add_option("model", stk_model, "model file or scenario name")->required();
  stk->add_option("--mu", stk_mu, "residual differentiation order");
  stk->add_option("--nu", stk_nu, "output differentiation order");
  stk->add_option("--theta", stk_theta, "promote these parameters first");
  stk->add_flag("--dump-stack", stk_dump, "print every stacked row");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*check)
      return run_check(model_arg, theta, sensor, point_file, simulate_to, use_simulate,
                       max_order, mu_opt, nu_opt, svd_audit, observability, tol_opt);
    if (*scan)
      return run_scan(scan_model, scan_theta_set, scan_sensor, scan_grid, scan_subsample,
                      scan_jobs, scan_csv, scan_svg, scan_mode, scan_linear_mu, axis_x, axis_y);
    if (*sim) return run_simulate(sim_model, sim_tspan, sim_dt, sim_csv, sim_derivs);
    if (*lin)
      return run_linear(lin_model, lin_pbh, lin_kalman, lin_block, lin_pre, lin_theta, lin_mu,
                        lin_point);
    if (*stk) return run_stack(stk_model, stk_mu, stk_nu, stk_theta, stk_dump);
  } catch (const IoError& e) {
    return exit_error(e, "io");
  } catch (const ModelError& e) {
    return exit_error(e, "model");
  } catch (const LinearError& e) {
    return exit_error(e, "linear");
  } catch (const SimError& e) {
    return exit_error(e, "simulation");
  } catch (const RankError& e) {
    return exit_error(e, "rank");
  } catch (const ExprError& e) {
    return exit_error(e, "expression");
  } catch (const std::exception& e) {
    return exit_error(e, "internal");
  }
  return 2;
}
