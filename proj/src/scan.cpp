#include "daeident/scan.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <unsupported/Eigen/MatrixFunctions>

namespace daeident {

int ScanResult::satisfied_count() const {
  int c = 0;
  for (const auto& p : points) c += p.satisfied ? 1 : 0;
  return c;
}

std::vector<GridAxis> parse_grid_spec(const std::string& spec) {
  std::vector<GridAxis> axes;
  std::istringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    auto eq = part.find('=');
    if (eq == std::string::npos) throw IoError("grid axis '" + part + "' lacks '='");
    GridAxis ax;
    ax.name = part.substr(0, eq);
    std::string range = part.substr(eq + 1);
    double lo, hi;
    int count;
    char c1, c2;
    std::istringstream rs(range);
    if (!(rs >> lo >> c1 >> hi >> c2 >> count) || c1 != ':' || c2 != ':' || count < 1)
      throw IoError("grid axis '" + part + "' must be name=lo:hi:count");
    ax.lo = lo;
    ax.hi = hi;
    ax.count = count;
    axes.push_back(std::move(ax));
  }
  if (axes.empty()) throw IoError("empty grid specification");
  return axes;
}

namespace {

void run_pool(int jobs, std::size_t count, const std::function<void(std::size_t)>& work) {
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 0; t < jobs; ++t) threads.emplace_back(body);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

ClassifiedPoint classify(const RankReport& r, const Eigen::VectorXd& state, double time) {
  ClassifiedPoint p;
  p.state = state;
  p.time = time;
  p.satisfied = r.satisfied;
  p.rank_deficit = r.required - r.rank_full;
  p.ill_conditioned = r.ill_conditioned;
  p.mu = r.mu;
  p.nu = r.nu;
  return p;
}

std::vector<std::string> dae_state_names(const DaeModel& m) {
  std::vector<std::string> names;
  for (SymbolId s : m.states()) names.push_back((*m.symbols)[s].name);
  return names;
}

ScanResult scan_dae(const Scenario& sc, const std::string& theta_set, const std::string& sensor,
                    const ScanOptions& opts) {
  DaeModel model = sc.dae_with_sensor(sensor);
  const bool identifiability = opts.mode == "identifiability";

  std::vector<std::string> theta_names;
  Eigen::VectorXd theta0;
  if (identifiability) {
    theta_names = sc.theta_set(theta_set).specs;
    theta0 = theta_values(model, theta_names);
  }

  // Point sources: the simulated trajectory, or a consistent grid over the
  // differential states.
  std::vector<Eigen::VectorXd> states;
  std::vector<double> times;
  std::string provenance;
  if (opts.grid) {
    if (sc.kind == ScenarioKind::Pendulum)
      throw IoError("grid scans need an index-1 model; use the trajectory for this scenario");
    std::vector<GridAxis> axes = parse_grid_spec(*opts.grid);
    if (static_cast<int>(axes.size()) != model.n1())
      throw IoError("grid must name every differential state");
    AlgebraicSolver solver(model);
    Eigen::VectorXd guess = model.initial_condition.size() == model.n()
                                ? Eigen::VectorXd(model.initial_condition.tail(model.n2()))
                                : Eigen::VectorXd::Zero(model.n2());
    std::vector<int> idx(axes.size(), 0);
    for (;;) {
      Eigen::VectorXd x1(model.n1());
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const GridAxis& ax = axes[a];
        double t = ax.count > 1 ? static_cast<double>(idx[a]) / (ax.count - 1) : 0.0;
        x1[static_cast<Eigen::Index>(a)] = ax.lo + t * (ax.hi - ax.lo);
      }
      Eigen::VectorXd x(model.n());
      x.head(model.n1()) = x1;
      bool ok = true;
      if (model.n2() > 0) {
        try {
          x.tail(model.n2()) = solver.solve(x1, guess);
        } catch (const ModelError&) {
          ok = false;  // no consistent completion at this grid node
        }
      }
      if (ok) {
        states.push_back(x);
        times.push_back(0.0);
      }
      std::size_t a = 0;
      for (; a < axes.size(); ++a) {
        if (++idx[a] < axes[a].count) break;
        idx[a] = 0;
      }
      if (a == axes.size()) break;
    }
    provenance = "grid:" + *opts.grid;
  } else if (sc.kind == ScenarioKind::Pendulum) {
    Trajectory traj = simulate_pendulum(sc.pendulum_params(), sc.phi0, sc.omega0, sc.t0, sc.t1,
                                        opts.sim);
    for (std::size_t i = 0; i < traj.states.size(); i += opts.subsample) {
      states.push_back(traj.states[i]);
      times.push_back(traj.times[i]);
    }
    provenance = "trajectory";
  } else {
    if (model.initial_condition.size() != model.n())
      throw IoError("scenario model lacks an initial condition");
    Trajectory traj = simulate_index1(model, model.initial_condition, sc.t0, sc.t1, opts.sim);
    for (std::size_t i = 0; i < traj.states.size(); i += opts.subsample) {
      states.push_back(traj.states[i]);
      times.push_back(traj.times[i]);
    }
    provenance = "trajectory";
  }

  // Derivative arrays deep enough for the full order loop.
  const int p = static_cast<int>(theta_names.size());
  int max_order = opts.rank.max_order >= 0 ? opts.rank.max_order : model.n() + p;
  if (opts.rank.fixed_mu || opts.rank.fixed_nu) {
    int mu = opts.rank.fixed_mu.value_or(opts.rank.fixed_nu.value_or(0));
    int nu = opts.rank.fixed_nu.value_or(mu);
    max_order = std::max(mu, nu);
  }
  const int sigma_max = max_order + 1;

  RankOptions rank_opts = opts.rank;
  if (sc.kind == ScenarioKind::Pendulum) rank_opts.algebraic_chain_columns = false;

  std::shared_ptr<ObservabilityChecker> obs;
  std::shared_ptr<IdentifiabilityChecker> ident;
  if (identifiability) ident = std::make_shared<IdentifiabilityChecker>(model, theta_names);
  else obs = std::make_shared<ObservabilityChecker>(model);

  std::shared_ptr<DerivativeGenerator> gen;
  std::shared_ptr<PendulumDerivatives> pend;
  PendulumParams pparams;
  if (sc.kind == ScenarioKind::Pendulum) {
    pparams = sc.pendulum_params();
    pend = std::make_shared<PendulumDerivatives>(pparams);
  } else {
    gen = std::make_shared<DerivativeGenerator>(model);
  }

  ScanResult result;
  result.scenario = sc.name;
  result.theta_set = identifiability ? theta_set : "";
  result.sensor = sensor.empty() ? sc.default_sensor : sensor;
  result.mode = opts.mode;
  result.provenance = provenance;
  result.state_names = dae_state_names(model);
  result.points.resize(states.size());

  run_pool(opts.jobs, states.size(), [&](std::size_t i) {
    EvalPoint pt;
    pt.time = times[i];
    if (sc.kind == ScenarioKind::Pendulum) {
      double phi = PendulumDerivatives::angle_of(states[i]);
      double omega = PendulumDerivatives::angular_velocity_of(states[i], pparams.length);
      pt.state_derivatives = pend->generate(phi, omega, sigma_max);
    } else {
      pt.state_derivatives = gen->generate(states[i], sigma_max);
    }
    RankReport r;
    if (identifiability) {
      pt.theta = theta0;
      r = ident->check(pt, rank_opts);
    } else {
      r = obs->check(pt, rank_opts);
    }
    result.points[i] = classify(r, states[i], times[i]);
  });
  return result;
}

ScanResult scan_linear(const Scenario& sc, const std::string& theta_set,
                       const ScanOptions& opts) {
  if (opts.mode != "identifiability")
    throw IoError("linear scans classify identifiability; use the linear command for "
                  "observability checks");
  LinearDae d = sc.linear_with_theta(sc.theta_set(theta_set));
  const int n = d.n();
  const int max_mu = opts.linear_mu.value_or(n + 1);
  const int sigma = max_mu + 1;

  std::vector<Eigen::VectorXd> x1s;
  std::vector<double> times;
  std::string provenance;
  if (opts.grid) {
    std::vector<GridAxis> axes = parse_grid_spec(*opts.grid);
    int n1 = d.partition ? d.partition->first : n;
    if (static_cast<int>(axes.size()) != n1)
      throw IoError("grid must name every differential state");
    std::vector<int> idx(axes.size(), 0);
    for (;;) {
      Eigen::VectorXd x1(n1);
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const GridAxis& ax = axes[a];
        double t = ax.count > 1 ? static_cast<double>(idx[a]) / (ax.count - 1) : 0.0;
        x1[static_cast<Eigen::Index>(a)] = ax.lo + t * (ax.hi - ax.lo);
      }
      x1s.push_back(x1);
      times.push_back(0.0);
      std::size_t a = 0;
      for (; a < axes.size(); ++a) {
        if (++idx[a] < axes[a].count) break;
        idx[a] = 0;
      }
      if (a == axes.size()) break;
    }
    provenance = "grid:" + *opts.grid;
  } else {
    if (sc.linear_x1_0.size() == 0) throw IoError("linear scenario lacks x1_0");
    Eigen::MatrixXd Ac = d.partition && d.partition->second > 0
                             ? reduced_matrix(d)
                             : Eigen::MatrixXd(d.E.partialPivLu().solve(d.A));
    Eigen::MatrixXd step = (Ac * opts.sim.dt).exp();
    Eigen::VectorXd x1 = sc.linear_x1_0;
    const auto nsteps = static_cast<std::size_t>(std::llround((sc.t1 - sc.t0) / opts.sim.dt));
    for (std::size_t k = 0; k <= nsteps; ++k) {
      if (k % static_cast<std::size_t>(opts.subsample) == 0) {
        x1s.push_back(x1);
        times.push_back(sc.t0 + static_cast<double>(k) * opts.sim.dt);
      }
      x1 = (step * x1).eval();
    }
    provenance = "trajectory";
  }

  ScanResult result;
  result.scenario = sc.name;
  result.theta_set = theta_set;
  result.mode = opts.mode;
  result.provenance = provenance;
  for (int i = 0; i < n; ++i) result.state_names.push_back("x" + std::to_string(i + 1));
  result.points.resize(x1s.size());

  run_pool(opts.jobs, x1s.size(), [&](std::size_t i) {
    EvalPoint pt;
    pt.time = times[i];
    pt.state_derivatives = linear_consistent_derivatives(d, x1s[i], sigma);
    RankReport r = opts.linear_mu
                       ? linear_identifiability(d, pt, *opts.linear_mu, opts.rank)
                       : linear_identifiability_loop(d, pt, max_mu, opts.rank);
    result.points[i] = classify(r, pt.state_derivatives[0], times[i]);
  });
  return result;
}

}  // namespace

ScanResult scan_scenario(const Scenario& sc, const std::string& theta_set,
                         const std::string& sensor, const ScanOptions& opts) {
  if (sc.kind == ScenarioKind::Linear) return scan_linear(sc, theta_set, opts);
  return scan_dae(sc, theta_set, sensor, opts);
}

void write_scan_csv(const ScanResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "index,t";
  for (const std::string& s : r.state_names) out << "," << s;
  out << ",verdict,rank_deficit,ill_conditioned,mu,nu\n";
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const ClassifiedPoint& p = r.points[i];
    out << i << "," << format_numeric(p.time);
    for (Eigen::Index c = 0; c < p.state.size(); ++c) out << "," << format_numeric(p.state[c]);
    out << "," << (p.satisfied ? "satisfied" : "not-satisfied") << "," << p.rank_deficit << ","
        << (p.ill_conditioned ? 1 : 0) << "," << p.mu << "," << p.nu << "\n";
  }
}

void write_scan_meta(const ScanResult& r, const std::string& path) {
  nlohmann::json j;
  j["scenario"] = r.scenario;
  j["theta_set"] = r.theta_set;
  j["sensor"] = r.sensor;
  j["mode"] = r.mode;
  j["provenance"] = r.provenance;
  j["points"] = r.points.size();
  j["satisfied"] = r.satisfied_count();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void write_scan_svg(const ScanResult& r, int xi, int xj, const std::string& path) {
  if (r.points.empty()) throw IoError("nothing to plot");
  const int W = 720, H = 540, margin = 50;
  double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
  for (const auto& p : r.points) {
    xlo = std::min(xlo, p.state[xi]);
    xhi = std::max(xhi, p.state[xi]);
    ylo = std::min(ylo, p.state[xj]);
    yhi = std::max(yhi, p.state[xj]);
  }
  if (xhi <= xlo) xhi = xlo + 1;
  if (yhi <= ylo) yhi = ylo + 1;
  auto X = [&](double v) { return margin + (v - xlo) / (xhi - xlo) * (W - 2 * margin); };
  auto Y = [&](double v) { return H - margin - (v - ylo) / (yhi - ylo) * (H - 2 * margin); };

  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << W - 2 * margin
      << "\" height=\"" << H - 2 * margin << "\" fill=\"none\" stroke=\"black\"/>\n";
  if (r.provenance == "trajectory" && r.points.size() > 1) {
    out << "<polyline fill=\"none\" stroke=\"#444444\" stroke-width=\"0.8\" points=\"";
    for (const auto& p : r.points) out << X(p.state[xi]) << "," << Y(p.state[xj]) << " ";
    out << "\"/>\n";
  }
  for (const auto& p : r.points) {
    out << "<circle cx=\"" << X(p.state[xi]) << "\" cy=\"" << Y(p.state[xj])
        << "\" r=\"2.2\" fill=\"" << (p.satisfied ? "#1f77b4" : "#d62728") << "\"/>\n";
  }
  out << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
      << r.state_names[static_cast<std::size_t>(xi)] << "</text>\n";
  out << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << H / 2 << ")\">" << r.state_names[static_cast<std::size_t>(xj)] << "</text>\n";
  out << "<text x=\"" << margin << "\" y=\"" << margin - 10 << "\">" << r.scenario
      << (r.theta_set.empty() ? "" : " / " + r.theta_set)
      << (r.sensor.empty() ? "" : " / sensor " + r.sensor) << " (" << r.mode << ")</text>\n";
  out << "</svg>\n";
}

}  // namespace daeident
