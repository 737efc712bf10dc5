#include "daeident/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Dense>

namespace daeident {

std::vector<SymbolId> DaeModel::states() const {
  std::vector<SymbolId> out = differential_states;
  out.insert(out.end(), algebraic_states.begin(), algebraic_states.end());
  return out;
}

Binding DaeModel::parameter_binding() const {
  Binding b(symbols->size());
  for (const auto& [id, v] : parameter_values) b.set(id, v);
  return b;
}

namespace {

void check_no_derivatives(const DaeModel& m, const std::vector<Expr>& exprs, const char* what) {
  std::set<SymbolId> syms;
  for (const Expr& e : exprs) collect_symbols(e, syms);
  for (SymbolId s : syms) {
    if ((*m.symbols)[s].kind == SymbolKind::Derivative)
      throw ModelError(std::string(what) + " must not contain derivative symbols (found '" +
                       (*m.symbols)[s].name + "')");
  }
}

void check_declared(const DaeModel& m, const std::vector<Expr>& exprs, const char* what) {
  std::set<SymbolId> declared;
  for (SymbolId s : m.differential_states) declared.insert(s);
  for (SymbolId s : m.algebraic_states) declared.insert(s);
  for (SymbolId s : m.parameters) declared.insert(s);
  std::set<SymbolId> syms;
  for (const Expr& e : exprs) collect_symbols(e, syms);
  for (SymbolId s : syms) {
    const Symbol& sym = (*m.symbols)[s];
    SymbolId root = sym.kind == SymbolKind::Derivative ? sym.base : s;
    if (sym.kind == SymbolKind::Time) continue;
    if (!declared.count(root))
      throw ModelError(std::string(what) + " uses undeclared symbol '" + sym.name + "'");
  }
}

}  // namespace

void validate_model(const DaeModel& m) {
  if (m.has_semi_explicit()) {
    if (static_cast<int>(m.f1.size()) != m.n1())
      throw ModelError("f1 must have one row per differential state");
    if (static_cast<int>(m.f2.size()) != m.n2())
      throw ModelError("f2 must have one row per algebraic state");
    check_no_derivatives(m, m.f1, "f1");
    check_no_derivatives(m, m.f2, "f2");
    check_declared(m, m.f1, "f1");
    check_declared(m, m.f2, "f2");
  }
  if (m.has_implicit()) {
    if (static_cast<int>(m.implicit_residuals.size()) != m.n())
      throw ModelError("implicit residuals must have n rows");
    check_declared(m, m.implicit_residuals, "F");
  }
  if (!m.has_semi_explicit() && !m.has_implicit())
    throw ModelError("model declares neither semi-explicit nor implicit residuals");
  check_no_derivatives(m, m.outputs, "outputs");
  check_declared(m, m.outputs, "outputs");
  if (m.initial_condition.size() != 0 && m.initial_condition.size() != m.n())
    throw ModelError("initial condition size does not match the state count");
}

DaeModel to_implicit(const DaeModel& m, bool* was_implicit) {
  if (!m.has_semi_explicit()) {
    if (was_implicit) *was_implicit = true;
    return m;
  }
  if (was_implicit) *was_implicit = false;
  DaeModel out = m;
  out.implicit_residuals.clear();
  out.implicit_residuals.reserve(static_cast<std::size_t>(m.n()));
  for (int i = 0; i < m.n1(); ++i) {
    SymbolId xdot = out.symbols->derivative_of(m.differential_states[static_cast<std::size_t>(i)], 1);
    out.implicit_residuals.push_back(m.f1[static_cast<std::size_t>(i)] - Expr::symbol(xdot));
  }
  for (const Expr& e : m.f2) out.implicit_residuals.push_back(e);
  return out;
}

AugmentedModel augment(const DaeModel& m, const std::vector<std::string>& theta_names) {
  if (theta_names.empty()) throw ModelError("parameter set for augmentation is empty");
  std::vector<SymbolId> ids;
  ids.reserve(theta_names.size());
  for (const std::string& name : theta_names) {
    auto id = m.symbols->lookup(name);
    if (!id) throw ModelError("unknown parameter '" + name + "'");
    ids.push_back(*id);
  }
  return augment(m, ids);
}

AugmentedModel augment(const DaeModel& m, const std::vector<SymbolId>& theta) {
  if (theta.empty()) throw ModelError("parameter set for augmentation is empty");
  for (SymbolId id : theta) {
    if (std::find(m.parameters.begin(), m.parameters.end(), id) == m.parameters.end())
      throw ModelError("symbol '" + (*m.symbols)[id].name + "' is not a declared parameter");
  }
  AugmentedModel am;
  am.base = m;
  am.free_parameters = theta;
  for (SymbolId id : theta) {
    am.base.parameter_values.erase(id);
    SymbolId dot = am.base.symbols->derivative_of(id, 1);
    am.extra_residuals.push_back(Expr::symbol(dot));
  }
  return am;
}

// ---------------------------------------------------------------------------
// Algebraic solve

AlgebraicSolver::AlgebraicSolver(const DaeModel& m) : model_(m) {
  if (!m.has_semi_explicit())
    throw ModelError("algebraic solving requires the semi-explicit form");
  residual_ = CompiledExprs(m.f2);
  std::vector<Expr> jac;
  jac.reserve(m.f2.size() * m.algebraic_states.size());
  for (const Expr& row : m.f2) {
    for (SymbolId s : m.algebraic_states) jac.push_back(diff_partial(row, s));
  }
  jacobian_ = CompiledExprs(jac);
}

Eigen::VectorXd AlgebraicSolver::solve(const Eigen::VectorXd& x1, const Eigen::VectorXd& guess,
                                       const NewtonOptions& opts) const {
  const int n1 = model_.n1();
  const int n2 = model_.n2();
  if (x1.size() != n1) throw ModelError("x1 size mismatch in algebraic solve");
  if (guess.size() != n2) throw ModelError("guess size mismatch in algebraic solve");
  if (n2 == 0) return Eigen::VectorXd();

  Binding b = model_.parameter_binding();
  b.resize(model_.symbols->size());
  for (int i = 0; i < n1; ++i) b.set(model_.differential_states[static_cast<std::size_t>(i)], x1[i]);

  Eigen::VectorXd x2 = guess;
  Eigen::VectorXd r(n2);
  Eigen::MatrixXd J(n2, n2);
  std::vector<double> scratch;
  std::vector<double> out(static_cast<std::size_t>(n2) * static_cast<std::size_t>(n2));

  auto eval_residual = [&](const Eigen::VectorXd& x2v, Eigen::VectorXd& rv) {
    for (int i = 0; i < n2; ++i) b.set(model_.algebraic_states[static_cast<std::size_t>(i)], x2v[i]);
    residual_.eval(b.values(), b.mask(), {rv.data(), static_cast<std::size_t>(n2)}, scratch);
  };

  eval_residual(x2, r);
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    double rnorm = r.lpNorm<Eigen::Infinity>();
    double tol = opts.tolerance_scale * (1.0 + x2.lpNorm<Eigen::Infinity>());
    if (rnorm <= tol) return x2;

    jacobian_.eval(b.values(), b.mask(), out, scratch);
    for (int i = 0; i < n2; ++i)
      for (int j = 0; j < n2; ++j)
        J(i, j) = out[static_cast<std::size_t>(i) * static_cast<std::size_t>(n2) +
                      static_cast<std::size_t>(j)];

    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible())
      throw ModelError("singular algebraic Jacobian at Newton iterate");
    Eigen::VectorXd step = lu.solve(-r);

    // Damped update: halve the step while the residual increases.
    double scale = 1.0;
    Eigen::VectorXd x2_new;
    Eigen::VectorXd r_new(n2);
    for (int h = 0; h <= opts.max_halvings; ++h) {
      x2_new = x2 + scale * step;
      eval_residual(x2_new, r_new);
      if (r_new.lpNorm<Eigen::Infinity>() < rnorm || h == opts.max_halvings) break;
      scale *= 0.5;
    }
    x2 = x2_new;
    r = r_new;
  }
  double rnorm = r.lpNorm<Eigen::Infinity>();
  if (rnorm <= opts.tolerance_scale * (1.0 + x2.lpNorm<Eigen::Infinity>())) return x2;
  throw ModelError("algebraic Newton did not converge within " +
                   std::to_string(opts.max_iterations) + " iterations");
}

Eigen::VectorXd solve_algebraic(const DaeModel& m, const Eigen::VectorXd& x1,
                                const Eigen::VectorXd& guess, const NewtonOptions& opts) {
  return AlgebraicSolver(m).solve(x1, guess, opts);
}

}  // namespace daeident
