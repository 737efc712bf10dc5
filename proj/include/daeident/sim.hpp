#pragma once

// Trajectory generation for index-1 semi-explicit DAEs (implicit Euler with
// per-step extrapolation and constraint projection), a dedicated simulator
// for the constrained pendulum, and construction of the consistent
// higher-order derivative arrays the rank tests evaluate at.

#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Core>

#include "daeident/ranktest.hpp"

namespace daeident {

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;  // full x per time
  std::vector<std::vector<Eigen::VectorXd>> derivative_arrays;  // when requested
  std::vector<double> consistency_residuals;  // max |f2| (or constraint) per time
  double dt = 0.0;

  double max_residual() const;
};

struct SimOptions {
  double dt = 1e-3;
  // One full step combined with two half steps per grid point; raises the
  // implicit Euler update to second order.
  bool richardson = true;
  double algebraic_tol = 1e-12;
  int newton_max_iterations = 50;
  int store_derivative_order = 0;  // also store (x', ..., x^(k)) per time
};

// Builds (x', ..., x^(sigma)) at a consistent state of an index-1
// semi-explicit model: x1' = f1, the algebraic derivatives from the totally
// differentiated constraints (linear in the highest order), higher orders
// recursively.  Chains are cached per order; generate() is thread-safe.
class DerivativeGenerator {
 public:
  explicit DerivativeGenerator(const DaeModel& m);

  std::vector<Eigen::VectorXd> generate(const Eigen::VectorXd& x, int sigma) const;

  const DaeModel& model() const { return model_; }

 private:
  struct Level;
  DaeModel model_;
  CompiledExprs a2_jacobian_;  // d f2 / d x2
  mutable std::vector<std::shared_ptr<const Level>> levels_;
  mutable std::vector<Expr> f1_chain_, f2_chain_;
  mutable std::mutex mutex_;
  void ensure_levels(int sigma) const;
};

std::vector<Eigen::VectorXd> consistent_derivatives(const DaeModel& m, const Eigen::VectorXd& x,
                                                    int sigma);

// max |f2(x1, x2)| for semi-explicit models.
double consistency_residual(const DaeModel& m, const Eigen::VectorXd& x);

Trajectory simulate_index1(const DaeModel& m, const Eigen::VectorXd& x0, double t0, double t1,
                           const SimOptions& opts = {});

struct PendulumParams {
  double mass = 0.3;
  double gravity = 9.81;
  double length = 6.25;
};

// Integrates the reduced angle dynamics with a classical 4th-order scheme
// and maps to the Cartesian 5-state (positions, velocities, arm tension).
// Stored states satisfy the length constraint to roundoff.
Trajectory simulate_pendulum(const PendulumParams& params, double phi0, double omega0, double t0,
                             double t1, const SimOptions& opts = {});

// Closed-form derivative arrays for the pendulum state, any order.
class PendulumDerivatives {
 public:
  explicit PendulumDerivatives(const PendulumParams& params);

  std::vector<Eigen::VectorXd> generate(double phi, double omega, int sigma) const;

  static double angle_of(const Eigen::VectorXd& x);
  static double angular_velocity_of(const Eigen::VectorXd& x, double length);

 private:
  PendulumParams params_;
  std::shared_ptr<SymbolTable> table_;
  SymbolId phi_;
  Expr angle_accel_;           // second derivative of the angle
  std::vector<Expr> coords_;   // the five state coordinates in angle symbols
  mutable std::vector<Expr> accel_chain_;          // successive totals of angle_accel_
  mutable std::vector<std::vector<Expr>> coord_chain_;  // successive totals of coords_
  mutable std::vector<std::shared_ptr<const CompiledExprs>> compiled_coords_;
  mutable std::vector<std::shared_ptr<const CompiledExprs>> compiled_accel_;
  mutable std::vector<SymbolId> phi_ids_;  // angle derivative symbols by order
  mutable std::size_t binding_size_ = 0;
  mutable std::mutex mutex_;
  void ensure(int sigma) const;
};

// Full pendulum state from angle coordinates.
Eigen::VectorXd pendulum_state(const PendulumParams& params, double phi, double omega);

}  // namespace daeident
