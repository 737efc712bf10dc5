#include "daeident/sim.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "daeident/linear.hpp"
#include "daeident/scenarios.hpp"
#include "doctest.h"

using namespace daeident;

TEST_CASE("reactor trajectory stays on the constraint and closes a loop") {
  Scenario rc = load_scenario("reactor");
  DaeModel m = rc.dae_with_sensor("x2");
  CHECK(consistency_residual(m, m.initial_condition) <= 1e-3);  // pre-projection
  Trajectory traj = simulate_index1(m, m.initial_condition, 0, 10, SimOptions{});
  CHECK(traj.max_residual() <= 1e-10);
  CHECK(traj.states.size() == 10001);

  // recurrence: the state at t = 5 is revisited within the final window
  // after a wide excursion
  const Eigen::VectorXd& ref = traj.states[5000];
  double nearest = 1e300, farthest = 0.0;
  Eigen::VectorXd scale(3);
  scale << 1.0, 100.0, 1.0;
  for (std::size_t i = 6000; i < traj.states.size(); ++i) {
    double dist = ((traj.states[i] - ref).array() / scale.array()).matrix().norm();
    nearest = std::min(nearest, dist);
    farthest = std::max(farthest, dist);
  }
  CHECK(nearest < 0.05);
  CHECK(farthest > 0.5);
}

TEST_CASE("constant dynamics give a constant trajectory") {
  DaeModel m;
  m.differential_states = {m.symbols->declare("x", SymbolKind::State)};
  m.f1 = {Expr::constant(0.0)};
  m.outputs = {parse_expression("x", *m.symbols)};
  Eigen::VectorXd x0(1);
  x0 << 3.25;
  Trajectory traj = simulate_index1(m, x0, 0, 1, SimOptions{});
  for (const auto& x : traj.states) CHECK(x[0] == doctest::Approx(3.25).epsilon(1e-14));
  // and all consistent derivatives vanish
  auto derivs = consistent_derivatives(m, x0, 4);
  for (int k = 1; k <= 4; ++k) CHECK(derivs[static_cast<std::size_t>(k)].norm() == 0.0);
}

TEST_CASE("index-1 integrator matches the matrix exponential flow") {
  Scenario lc = load_scenario("linear4");
  LinearDae d = *lc.model.linear;
  DaeModel m = linear_to_dae(d);
  Eigen::VectorXd x0 = linear_consistent_state(d, lc.linear_x1_0);
  SimOptions opts;
  opts.dt = 1e-3;
  Trajectory traj = simulate_index1(m, x0, 0, 2, opts);
  Eigen::MatrixXd Ac = reduced_matrix(d);
  for (double t : {0.5, 1.0, 2.0}) {
    auto idx = static_cast<std::size_t>(std::llround(t / opts.dt));
    Eigen::VectorXd x1_exact = (Ac * t).exp() * lc.linear_x1_0;
    Eigen::VectorXd x_exact = linear_consistent_state(d, x1_exact);
    CHECK((traj.states[idx] - x_exact).norm() <= 1e-6 * (1.0 + x_exact.norm()));
  }
}

TEST_CASE("pendulum equilibrium and conservation") {
  PendulumParams p;  // L = 6.25, g = 9.81, m = 0.3
  {
    Trajectory traj = simulate_pendulum(p, 0.0, 0.0, 0, 1, SimOptions{});
    const Eigen::VectorXd& x = traj.states.back();
    CHECK(x[0] == doctest::Approx(0.0));
    CHECK(x[1] == doctest::Approx(-p.length));
    CHECK(x[2] == doctest::Approx(0.0));
    CHECK(x[3] == doctest::Approx(0.0));
    CHECK(x[4] == doctest::Approx(-p.mass * p.gravity / p.length).epsilon(1e-12));
  }
  {
    Trajectory traj = simulate_pendulum(p, 0.4, 0.0, 0, 20, SimOptions{});
    CHECK(traj.max_residual() <= 1e-10);
    auto energy = [&](const Eigen::VectorXd& x) {
      return 0.5 * p.mass * (x[2] * x[2] + x[3] * x[3]) + p.mass * p.gravity * x[1];
    };
    double e0 = energy(traj.states.front());
    double drift = 0.0;
    for (const auto& x : traj.states) drift = std::max(drift, std::abs(energy(x) - e0));
    CHECK(drift <= 1e-6 * std::abs(e0));
    // bounded swing at the configured amplitude
    for (const auto& x : traj.states) CHECK(std::abs(x[0]) <= p.length * std::sin(0.4) + 1e-6);
  }
}

TEST_CASE("pendulum residuals of the first-order form are exact") {
  Scenario pc = load_scenario("pendulum");
  DaeModel m = pc.dae_with_sensor("");
  PendulumParams p = pc.pendulum_params();
  PendulumDerivatives pd(p);
  Trajectory traj = simulate_pendulum(p, pc.phi0, pc.omega0, 0, 2, SimOptions{});
  DaeModel f = to_implicit(m);
  Binding b = m.parameter_binding();
  b.resize(m.symbols->size() + 16);
  std::vector<SymbolId> states = m.states();
  for (std::size_t i = 200; i < traj.states.size(); i += 400) {
    const Eigen::VectorXd& x = traj.states[i];
    auto derivs = pd.generate(PendulumDerivatives::angle_of(x),
                              PendulumDerivatives::angular_velocity_of(x, p.length), 1);
    for (int j = 0; j < 5; ++j) {
      b.set(states[static_cast<std::size_t>(j)], derivs[0][j]);
      b.set(m.symbols->derivative_of(states[static_cast<std::size_t>(j)], 1), derivs[1][j]);
    }
    for (const Expr& row : f.implicit_residuals)
      CHECK(std::abs(evaluate(row, *m.symbols, b)) <= 1e-8);
  }
}

TEST_CASE("consistent derivatives at the reactor start state") {
  Scenario rc = load_scenario("reactor");
  DaeModel m = rc.dae_with_sensor("x2");
  Eigen::VectorXd x0 = m.initial_condition;
  x0.tail(1) = solve_algebraic(m, x0.head(2), x0.tail(1));
  CHECK(consistency_residual(m, x0) <= 1e-10);
  auto derivs = consistent_derivatives(m, x0, 3);
  CHECK(std::abs(derivs[1][0] - 5e-4) <= 1e-4);  // x1' = k1(c0 - x1) - x3

  // the differentiated-constraint solve matches a finite difference of the
  // algebraic solution along x1
  AlgebraicSolver solver(m);
  double h = 1e-6;
  Eigen::VectorXd x1p = x0.head(2) + h * derivs[1].head(2);
  Eigen::VectorXd x1m = x0.head(2) - h * derivs[1].head(2);
  double fd = (solver.solve(x1p, x0.tail(1))[0] - solver.solve(x1m, x0.tail(1))[0]) / (2 * h);
  CHECK(derivs[1][2] == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("linear derivative arrays match the closed-form flow") {
  Scenario lc = load_scenario("linear4");
  LinearDae d = *lc.model.linear;
  DaeModel m = linear_to_dae(d);
  Eigen::VectorXd x0 = linear_consistent_state(d, lc.linear_x1_0);
  auto generic = consistent_derivatives(m, x0, 4);
  auto closed = linear_consistent_derivatives(d, lc.linear_x1_0, 4);
  for (int k = 0; k <= 4; ++k)
    CHECK((generic[static_cast<std::size_t>(k)] - closed[static_cast<std::size_t>(k)]).norm() <=
          1e-10 * (1.0 + closed[static_cast<std::size_t>(k)].norm()));
}

TEST_CASE("inconsistent starts that projection cannot fix are rejected") {
  Scenario pc = load_scenario("pendulum");
  DaeModel m = pc.dae_with_sensor("");
  Eigen::VectorXd bad(5);
  bad << 1.0, 1.0, 0.0, 0.0, 0.0;  // violates the length constraint, index-3
  CHECK_THROWS_AS(simulate_index1(m, bad, 0, 1, SimOptions{}), SimError);
}

TEST_CASE("property: trajectory finite differences converge to the symbolic derivatives") {
  // observed order of |FD(trajectory) - x'(symbolic)| under step halving
  auto observed_order = [](auto&& simulate, auto&& derivative_at, double t_star, double h) {
    double errors[2];
    for (int pass = 0; pass < 2; ++pass) {
      double step = pass == 0 ? h : h / 2;
      Trajectory traj = simulate(step);
      auto k = static_cast<std::size_t>(std::llround(t_star / step));
      Eigen::VectorXd fd = (traj.states[k + 1] - traj.states[k - 1]) / (2 * step);
      Eigen::VectorXd sym = derivative_at(traj.states[k]);
      errors[pass] = (fd - sym).norm() / (1.0 + sym.norm());
    }
    return std::log2(errors[0] / errors[1]);
  };

  {
    Scenario rc = load_scenario("reactor");
    DaeModel m = rc.dae_with_sensor("x2");
    DerivativeGenerator gen(m);
    double order = observed_order(
        [&](double step) {
          SimOptions o;
          o.dt = step;
          return simulate_index1(m, m.initial_condition, 0, 1.5, o);
        },
        [&](const Eigen::VectorXd& x) { return gen.generate(x, 1)[1]; }, 1.0, 4e-3);
    CHECK(order >= 1.8);
  }
  {
    Scenario pc = load_scenario("pendulum");
    PendulumParams p = pc.pendulum_params();
    PendulumDerivatives pd(p);
    double order = observed_order(
        [&](double step) {
          SimOptions o;
          o.dt = step;
          return simulate_pendulum(p, pc.phi0, pc.omega0, 0, 1.5, o);
        },
        [&](const Eigen::VectorXd& x) {
          return pd.generate(PendulumDerivatives::angle_of(x),
                             PendulumDerivatives::angular_velocity_of(x, p.length), 1)[1];
        },
        1.0, 4e-2);
    CHECK(order >= 1.8);
  }
}
