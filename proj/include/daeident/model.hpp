#pragma once

// Differential-algebraic model declarations: semi-explicit (f1, f2, h) or
// implicit (F, h) residual form, parameter bookkeeping, promotion of
// parameters to constant states, and Newton solving of the algebraic part.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "daeident/expr.hpp"

namespace daeident {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DaeModel {
  std::string name;
  std::shared_ptr<SymbolTable> symbols = std::make_shared<SymbolTable>();
  std::vector<SymbolId> differential_states;  // x1, size n1
  std::vector<SymbolId> algebraic_states;     // x2, size n2 (may be empty)
  std::vector<SymbolId> parameters;
  std::map<SymbolId, double> parameter_values;  // known values (free ones absent)

  std::vector<Expr> f1, f2;              // semi-explicit residuals
  std::vector<Expr> implicit_residuals;  // F over (x, x', theta)
  std::vector<Expr> outputs;             // h over (x, theta)

  Eigen::VectorXd initial_condition;  // optional, full-state order (x1, x2)

  int n1() const { return static_cast<int>(differential_states.size()); }
  int n2() const { return static_cast<int>(algebraic_states.size()); }
  int n() const { return n1() + n2(); }
  int q() const { return static_cast<int>(outputs.size()); }
  bool has_semi_explicit() const { return !f1.empty() || !f2.empty(); }
  bool has_implicit() const { return !implicit_residuals.empty(); }

  // x1 followed by x2.
  std::vector<SymbolId> states() const;

  // Binding of all parameters with known values.
  Binding parameter_binding() const;
};

// Checks declared sizes, free symbols, and the semi-explicit restriction
// that f1/f2/h contain no derivative symbols.
void validate_model(const DaeModel& m);

// Implicit residuals [f1 - x1'; f2]; outputs unchanged.  A model that is
// already implicit is returned as-is with *was_implicit set.
DaeModel to_implicit(const DaeModel& m, bool* was_implicit = nullptr);

struct AugmentedModel {
  DaeModel base;                           // promoted entries removed from the value map
  std::vector<SymbolId> free_parameters;   // theta, in promotion order
  std::vector<Expr> extra_residuals;       // the p residuals theta' = 0

  int p() const { return static_cast<int>(free_parameters.size()); }
};

// Promotes the named parameters to constant states (residuals theta' = 0).
AugmentedModel augment(const DaeModel& m, const std::vector<std::string>& theta_names);
AugmentedModel augment(const DaeModel& m, const std::vector<SymbolId>& theta);

struct NewtonOptions {
  int max_iterations = 50;
  int max_halvings = 10;
  double tolerance_scale = 1e-10;  // stop at ||f2||_inf <= scale * (1 + ||x2||_inf)
};

// Cached Newton solver for f2(x1, x2) = 0 in x2 at fixed x1.  Requires the
// model to be semi-explicit and index 1 near the solution.
class AlgebraicSolver {
 public:
  explicit AlgebraicSolver(const DaeModel& m);

  Eigen::VectorXd solve(const Eigen::VectorXd& x1, const Eigen::VectorXd& guess,
                        const NewtonOptions& opts = {}) const;

 private:
  const DaeModel& model_;
  CompiledExprs residual_;
  CompiledExprs jacobian_;  // d f2 / d x2, row-major
};

Eigen::VectorXd solve_algebraic(const DaeModel& m, const Eigen::VectorXd& x1,
                                const Eigen::VectorXd& guess, const NewtonOptions& opts = {});

}  // namespace daeident
