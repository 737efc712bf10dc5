#include "daeident/sim.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace daeident {

double Trajectory::max_residual() const {
  double m = 0.0;
  for (double r : consistency_residuals) m = std::max(m, r);
  return m;
}

// ---------------------------------------------------------------------------
// DerivativeGenerator

struct DerivativeGenerator::Level {
  CompiledExprs f1;  // d^(k-1) f1 / dt^(k-1): its value is x1^(k)
  CompiledExprs g;   // d^k f2 / dt^k: linear in x2^(k)
  std::vector<SymbolId> x1_ids, x2_ids;  // order-k derivative symbols
  std::size_t binding_size = 0;
};

DerivativeGenerator::DerivativeGenerator(const DaeModel& m) : model_(m) {
  if (!m.has_semi_explicit())
    throw SimError("consistent derivatives require the semi-explicit form");
  validate_model(m);
  f1_chain_ = m.f1;
  f2_chain_ = m.f2;
  if (model_.n2() > 0) {
    std::vector<Expr> jac;
    jac.reserve(static_cast<std::size_t>(model_.n2()) * static_cast<std::size_t>(model_.n2()));
    for (const Expr& row : model_.f2)
      for (SymbolId s : model_.algebraic_states) jac.push_back(diff_partial(row, s));
    a2_jacobian_ = CompiledExprs(jac);
  }
}

void DerivativeGenerator::ensure_levels(int sigma) const {
  std::lock_guard<std::mutex> lock(mutex_);
  while (static_cast<int>(levels_.size()) <= sigma) {
    int k = static_cast<int>(levels_.size());
    if (k >= 2) {
      for (Expr& e : f1_chain_) e = pin_parameter_derivatives(diff_total(e, *model_.symbols),
                                                              *model_.symbols);
      for (Expr& e : f2_chain_) e = pin_parameter_derivatives(diff_total(e, *model_.symbols),
                                                              *model_.symbols);
    } else if (k == 1) {
      for (Expr& e : f2_chain_) e = pin_parameter_derivatives(diff_total(e, *model_.symbols),
                                                              *model_.symbols);
    }
    auto level = std::make_shared<Level>();
    if (k >= 1) {
      level->f1 = CompiledExprs(f1_chain_);
      level->g = CompiledExprs(f2_chain_);
    }
    for (SymbolId s : model_.differential_states)
      level->x1_ids.push_back(model_.symbols->derivative_of(s, k));
    for (SymbolId s : model_.algebraic_states)
      level->x2_ids.push_back(model_.symbols->derivative_of(s, k));
    level->binding_size = model_.symbols->size();
    levels_.push_back(std::move(level));
  }
}

std::vector<Eigen::VectorXd> DerivativeGenerator::generate(const Eigen::VectorXd& x,
                                                           int sigma) const {
  const int n1 = model_.n1();
  const int n2 = model_.n2();
  if (x.size() != model_.n()) throw SimError("state size mismatch");
  if (sigma < 0) throw SimError("derivative order must be nonnegative");
  ensure_levels(sigma);

  std::vector<std::shared_ptr<const Level>> levels;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    levels.assign(levels_.begin(), levels_.begin() + sigma + 1);
  }

  Binding b(levels.back()->binding_size);
  for (const auto& [id, v] : model_.parameter_values) b.set(id, v);
  for (int i = 0; i < n1; ++i) b.set(levels[0]->x1_ids[static_cast<std::size_t>(i)], x[i]);
  for (int i = 0; i < n2; ++i) b.set(levels[0]->x2_ids[static_cast<std::size_t>(i)], x[n1 + i]);

  // Jacobian of the constraints in the algebraic states, constant across
  // orders at a fixed state.
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  std::vector<double> scratch;
  if (n2 > 0) {
    std::vector<double> out(static_cast<std::size_t>(n2) * static_cast<std::size_t>(n2));
    a2_jacobian_.eval(b.values(), b.mask(), out, scratch);
    Eigen::MatrixXd A2(n2, n2);
    for (int i = 0; i < n2; ++i)
      for (int j = 0; j < n2; ++j)
        A2(i, j) = out[static_cast<std::size_t>(i) * static_cast<std::size_t>(n2) +
                       static_cast<std::size_t>(j)];
    Eigen::FullPivLU<Eigen::MatrixXd> check(A2);
    if (!check.isInvertible())
      throw SimError("singular constraint Jacobian (not index 1 at this state)");
    lu.compute(A2);
  }

  std::vector<Eigen::VectorXd> result(static_cast<std::size_t>(sigma) + 1);
  result[0] = x;
  std::vector<double> out1(static_cast<std::size_t>(n1));
  std::vector<double> out2(static_cast<std::size_t>(n2));
  for (int k = 1; k <= sigma; ++k) {
    const Level& level = *levels[static_cast<std::size_t>(k)];
    Eigen::VectorXd xk(n1 + n2);
    level.f1.eval(b.values(), b.mask(), out1, scratch);
    for (int i = 0; i < n1; ++i) {
      xk[i] = out1[static_cast<std::size_t>(i)];
      b.set(level.x1_ids[static_cast<std::size_t>(i)], xk[i]);
    }
    if (n2 > 0) {
      for (int i = 0; i < n2; ++i) b.set(level.x2_ids[static_cast<std::size_t>(i)], 0.0);
      level.g.eval(b.values(), b.mask(), out2, scratch);
      Eigen::VectorXd r(n2);
      for (int i = 0; i < n2; ++i) r[i] = out2[static_cast<std::size_t>(i)];
      Eigen::VectorXd x2k = lu.solve(-r);
      for (int i = 0; i < n2; ++i) {
        xk[n1 + i] = x2k[i];
        b.set(level.x2_ids[static_cast<std::size_t>(i)], x2k[i]);
      }
    }
    result[static_cast<std::size_t>(k)] = std::move(xk);
  }
  return result;
}

std::vector<Eigen::VectorXd> consistent_derivatives(const DaeModel& m, const Eigen::VectorXd& x,
                                                    int sigma) {
  return DerivativeGenerator(m).generate(x, sigma);
}

double consistency_residual(const DaeModel& m, const Eigen::VectorXd& x) {
  if (!m.has_semi_explicit())
    throw SimError("consistency residual requires the semi-explicit form");
  if (m.n2() == 0) return 0.0;
  Binding b = m.parameter_binding();
  b.resize(m.symbols->size());
  std::vector<SymbolId> states = m.states();
  for (int i = 0; i < m.n(); ++i) b.set(states[static_cast<std::size_t>(i)], x[i]);
  double worst = 0.0;
  for (const Expr& e : m.f2) worst = std::max(worst, std::abs(evaluate(e, *m.symbols, b)));
  return worst;
}

// ---------------------------------------------------------------------------
// Index-1 simulation

namespace {

// One implicit Euler step solved by damped Newton on the full (x1, x2) pair.
class ImplicitStepper {
 public:
  explicit ImplicitStepper(const DaeModel& m) : model_(m) {
    std::vector<Expr> rows = m.f1;
    rows.insert(rows.end(), m.f2.begin(), m.f2.end());
    residual_ = CompiledExprs(rows);
    std::vector<SymbolId> states = m.states();
    std::vector<Expr> jac;
    jac.reserve(rows.size() * states.size());
    for (const Expr& row : rows)
      for (SymbolId s : states) jac.push_back(diff_partial(row, s));
    jacobian_ = CompiledExprs(jac);
    state_ids_ = states;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& x, double h, const SimOptions& opts) const {
    const int n = model_.n();
    const int n1 = model_.n1();
    Binding b = model_.parameter_binding();
    b.resize(model_.symbols->size());
    Eigen::VectorXd u = x;  // iterate
    Eigen::VectorXd r(n), fx(n);
    Eigen::MatrixXd J(n, n);
    std::vector<double> scratch;
    std::vector<double> fout(static_cast<std::size_t>(n));
    std::vector<double> jout(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));

    auto eval_residual = [&](const Eigen::VectorXd& uv, Eigen::VectorXd& rv) {
      for (int i = 0; i < n; ++i) b.set(state_ids_[static_cast<std::size_t>(i)], uv[i]);
      residual_.eval(b.values(), b.mask(), fout, scratch);
      for (int i = 0; i < n1; ++i) rv[i] = uv[i] - x[i] - h * fout[static_cast<std::size_t>(i)];
      for (int i = n1; i < n; ++i) rv[i] = fout[static_cast<std::size_t>(i)];
    };

    eval_residual(u, r);
    for (int iter = 0; iter < opts.newton_max_iterations; ++iter) {
      double rnorm = r.lpNorm<Eigen::Infinity>();
      if (rnorm <= opts.algebraic_tol * (1.0 + u.lpNorm<Eigen::Infinity>())) return u;

      jacobian_.eval(b.values(), b.mask(), jout, scratch);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double d = jout[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                          static_cast<std::size_t>(j)];
          J(i, j) = i < n1 ? ((i == j ? 1.0 : 0.0) - h * d) : d;
        }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
      Eigen::VectorXd step = lu.solve(-r);
      if (!step.allFinite()) throw SimError("implicit step Newton produced a non-finite update");

      double scale = 1.0;
      Eigen::VectorXd u_new;
      Eigen::VectorXd r_new(n);
      for (int hvs = 0; hvs <= 10; ++hvs) {
        u_new = u + scale * step;
        eval_residual(u_new, r_new);
        if (r_new.lpNorm<Eigen::Infinity>() < rnorm || hvs == 10) break;
        scale *= 0.5;
      }
      u = u_new;
      r = r_new;
    }
    if (r.lpNorm<Eigen::Infinity>() <= opts.algebraic_tol * (1.0 + u.lpNorm<Eigen::Infinity>()))
      return u;
    throw SimError("implicit step Newton did not converge");
  }

 private:
  const DaeModel& model_;
  CompiledExprs residual_;
  CompiledExprs jacobian_;
  std::vector<SymbolId> state_ids_;
};

}  // namespace

Trajectory simulate_index1(const DaeModel& m, const Eigen::VectorXd& x0, double t0, double t1,
                           const SimOptions& opts) {
  if (!m.has_semi_explicit()) throw SimError("index-1 simulation requires the semi-explicit form");
  validate_model(m);
  if (x0.size() != m.n()) throw SimError("initial state size mismatch");
  if (!(opts.dt > 0) || t1 < t0) throw SimError("invalid time span or step");

  const int n1 = m.n1();
  const int n2 = m.n2();
  AlgebraicSolver projector(m);
  NewtonOptions proj_opts;
  proj_opts.tolerance_scale = opts.algebraic_tol;

  auto project = [&](Eigen::VectorXd& x) {
    if (n2 == 0) return;
    Eigen::VectorXd x2;
    try {
      x2 = projector.solve(x.head(n1), x.tail(n2), proj_opts);
    } catch (const ModelError& e) {
      throw SimError(std::string("state projection onto the constraint failed: ") + e.what());
    }
    x.tail(n2) = x2;
  };

  Eigen::VectorXd x = x0;
  project(x);

  ImplicitStepper stepper(m);
  DerivativeGenerator derivs(m);

  const auto nsteps = static_cast<std::size_t>(std::llround((t1 - t0) / opts.dt));
  Trajectory traj;
  traj.dt = opts.dt;
  traj.times.reserve(nsteps + 1);
  traj.states.reserve(nsteps + 1);
  traj.consistency_residuals.reserve(nsteps + 1);

  auto store = [&](double t, const Eigen::VectorXd& xs) {
    traj.times.push_back(t);
    traj.states.push_back(xs);
    traj.consistency_residuals.push_back(consistency_residual(m, xs));
    if (opts.store_derivative_order > 0)
      traj.derivative_arrays.push_back(derivs.generate(xs, opts.store_derivative_order));
  };

  store(t0, x);
  for (std::size_t k = 1; k <= nsteps; ++k) {
    double h = opts.dt;
    Eigen::VectorXd x_next;
    if (opts.richardson) {
      Eigen::VectorXd full = stepper.step(x, h, opts);
      Eigen::VectorXd half = stepper.step(stepper.step(x, h / 2, opts), h / 2, opts);
      x_next = 2.0 * half - full;
    } else {
      x_next = stepper.step(x, h, opts);
    }
    project(x_next);
    x = x_next;
    store(t0 + static_cast<double>(k) * opts.dt, x);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Pendulum

Eigen::VectorXd pendulum_state(const PendulumParams& p, double phi, double omega) {
  Eigen::VectorXd x(5);
  const double s = std::sin(phi), c = std::cos(phi);
  x[0] = p.length * s;
  x[1] = -p.length * c;
  x[2] = p.length * omega * c;
  x[3] = p.length * omega * s;
  x[4] = -p.mass * (p.gravity * c + p.length * omega * omega) / p.length;
  return x;
}

Trajectory simulate_pendulum(const PendulumParams& p, double phi0, double omega0, double t0,
                             double t1, const SimOptions& opts) {
  if (!(p.length > 0) || !(p.mass > 0)) throw SimError("pendulum needs positive mass and length");
  if (!(opts.dt > 0) || t1 < t0) throw SimError("invalid time span or step");

  auto accel = [&](double phi) { return -(p.gravity / p.length) * std::sin(phi); };

  PendulumDerivatives derivs(p);

  Trajectory traj;
  traj.dt = opts.dt;
  const auto nsteps = static_cast<std::size_t>(std::llround((t1 - t0) / opts.dt));

  double phi = phi0, omega = omega0;
  auto store = [&](double t) {
    Eigen::VectorXd x = pendulum_state(p, phi, omega);
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.consistency_residuals.push_back(
        std::abs(x[0] * x[0] + x[1] * x[1] - p.length * p.length));
    if (opts.store_derivative_order > 0)
      traj.derivative_arrays.push_back(derivs.generate(phi, omega, opts.store_derivative_order));
  };

  store(t0);
  const double h = opts.dt;
  for (std::size_t k = 1; k <= nsteps; ++k) {
    // Classical RK4 on (phi, omega).
    double k1p = omega, k1w = accel(phi);
    double k2p = omega + 0.5 * h * k1w, k2w = accel(phi + 0.5 * h * k1p);
    double k3p = omega + 0.5 * h * k2w, k3w = accel(phi + 0.5 * h * k2p);
    double k4p = omega + h * k3w, k4w = accel(phi + h * k3p);
    phi += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p);
    omega += h / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w);
    store(t0 + static_cast<double>(k) * opts.dt);
  }
  return traj;
}

PendulumDerivatives::PendulumDerivatives(const PendulumParams& params)
    : params_(params), table_(std::make_shared<SymbolTable>()) {
  phi_ = table_->declare("phi", SymbolKind::State);
  Expr phi = Expr::symbol(phi_);
  Expr L = Expr::constant(params.length);
  Expr g = Expr::constant(params.gravity);
  Expr mass = Expr::constant(params.mass);
  angle_accel_ = -(g / L) * apply(Func::Sin, phi);
  Expr x1 = L * apply(Func::Sin, phi);
  Expr x2 = -(L * apply(Func::Cos, phi));
  Expr x3 = diff_total(x1, *table_);
  Expr x4 = diff_total(x2, *table_);
  Expr x5 = mass * (g * x2 - pow(x3, Expr::constant(2.0)) - pow(x4, Expr::constant(2.0))) /
            pow(L, Expr::constant(2.0));
  coords_ = {x1, x2, x3, x4, x5};
}

void PendulumDerivatives::ensure(int sigma) const {
  std::lock_guard<std::mutex> lock(mutex_);
  while (static_cast<int>(coord_chain_.size()) <= sigma) {
    if (coord_chain_.empty()) {
      coord_chain_.push_back(coords_);
      accel_chain_.push_back(angle_accel_);
    } else {
      std::vector<Expr> next;
      next.reserve(coords_.size());
      for (const Expr& e : coord_chain_.back()) next.push_back(diff_total(e, *table_));
      coord_chain_.push_back(std::move(next));
      accel_chain_.push_back(diff_total(accel_chain_.back(), *table_));
    }
    compiled_coords_.push_back(std::make_shared<CompiledExprs>(coord_chain_.back()));
    compiled_accel_.push_back(std::make_shared<CompiledExprs>(
        std::span<const Expr>(&accel_chain_.back(), 1)));
  }
  while (static_cast<int>(phi_ids_.size()) <= sigma + 2) {
    if (phi_ids_.empty()) {
      phi_ids_.push_back(phi_);
    } else {
      phi_ids_.push_back(
          table_->derivative_of(phi_, static_cast<int>(phi_ids_.size())));
    }
  }
  binding_size_ = table_->size();
}

std::vector<Eigen::VectorXd> PendulumDerivatives::generate(double phi, double omega,
                                                           int sigma) const {
  ensure(sigma);
  std::vector<std::shared_ptr<const CompiledExprs>> coords, accels;
  std::vector<SymbolId> phi_ids;
  std::size_t binding_size;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    coords.assign(compiled_coords_.begin(), compiled_coords_.begin() + sigma + 1);
    accels.assign(compiled_accel_.begin(), compiled_accel_.begin() + sigma + 1);
    phi_ids.assign(phi_ids_.begin(), phi_ids_.begin() + sigma + 3);
    binding_size = binding_size_;
  }

  // Angle derivatives first: the second and higher orders come from the
  // reduced angle dynamics differentiated through.
  Binding b(binding_size);
  std::vector<double> scratch;
  std::vector<double> one(1);
  b.set(phi_ids[0], phi);
  b.set(phi_ids[1], omega);
  for (int j = 2; j <= sigma + 2; ++j) {
    accels[static_cast<std::size_t>(j - 2)]->eval(b.values(), b.mask(), one, scratch);
    b.set(phi_ids[static_cast<std::size_t>(j)], one[0]);
  }

  std::vector<Eigen::VectorXd> result(static_cast<std::size_t>(sigma) + 1);
  std::vector<double> out(5);
  for (int k = 0; k <= sigma; ++k) {
    coords[static_cast<std::size_t>(k)]->eval(b.values(), b.mask(), out, scratch);
    Eigen::VectorXd xk(5);
    for (int i = 0; i < 5; ++i) xk[i] = out[static_cast<std::size_t>(i)];
    result[static_cast<std::size_t>(k)] = std::move(xk);
  }
  return result;
}

double PendulumDerivatives::angle_of(const Eigen::VectorXd& x) {
  return std::atan2(x[0], -x[1]);
}

double PendulumDerivatives::angular_velocity_of(const Eigen::VectorXd& x, double length) {
  return (x[0] * x[3] - x[1] * x[2]) / (length * length);
}

}  // namespace daeident
