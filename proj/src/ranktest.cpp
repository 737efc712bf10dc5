#include "daeident/ranktest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace daeident {

int numerical_rank(const Eigen::MatrixXd& M, double tol) {
  if (tol <= 0) throw RankError("rank tolerance must be positive");
  if (M.rows() == 0 || M.cols() == 0) return 0;
  if (!M.allFinite()) throw RankError("matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  int r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > tol) ++r;
  return r;
}

int numerical_rank(const Eigen::MatrixXcd& M, double tol) {
  if (tol <= 0) throw RankError("rank tolerance must be positive");
  if (M.rows() == 0 || M.cols() == 0) return 0;
  if (!M.allFinite()) throw RankError("matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
  int r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()[i] > tol) ++r;
  return r;
}

double default_tolerance_from_norm(double norm2, int sigma, int n) {
  const double floor = std::numeric_limits<double>::min();
  if (!(norm2 > 0.0)) return floor;
  double spacing = std::nextafter(norm2, std::numeric_limits<double>::infinity()) - norm2;
  double tol = static_cast<double>(sigma) * static_cast<double>(n) * spacing;
  return std::max(tol, floor);
}

double default_tolerance(const Eigen::MatrixXd& M, int sigma, int n) {
  if (M.rows() == 0 || M.cols() == 0) throw RankError("tolerance of an empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  double norm2 = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
  return default_tolerance_from_norm(norm2, sigma, n);
}

std::optional<double> rank_tolerance_from_env() {
  const char* s = std::getenv("IDENT_RANK_TOL");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end == s || v <= 0) throw RankError("IDENT_RANK_TOL must be a positive number");
  return v;
}

OneFullResult is_one_full(const Eigen::MatrixXd& M, int m1, double tol) {
  if (m1 < 0 || m1 > M.cols()) throw RankError("m1 out of range in 1-fullness test");
  OneFullResult res;
  res.rank_full = numerical_rank(M, tol);
  res.rank_right = numerical_rank(Eigen::MatrixXd(M.rightCols(M.cols() - m1)), tol);
  res.one_full = res.rank_full == m1 + res.rank_right;
  return res;
}

// ---------------------------------------------------------------------------
// Shared verdict machinery

// One rank-condition evaluation on an evaluated block matrix.
RankReport rank_condition_report(const Eigen::MatrixXd& M, int left_cols, int mu, int nu,
                                 int sigma, int tol_n, const RankOptions& opts) {
  if (!M.allFinite()) throw RankError("block matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_full(M);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd_right(M.rightCols(M.cols() - left_cols));

  double norm2 = svd_full.singularValues().size() > 0 ? svd_full.singularValues()[0] : 0.0;
  double tol;
  std::optional<double> env = opts.use_env_tolerance ? rank_tolerance_from_env() : std::nullopt;
  if (opts.tolerance) {
    tol = *opts.tolerance;
  } else if (env) {
    tol = *env;
  } else {
    tol = default_tolerance_from_norm(norm2, sigma, tol_n);
  }

  RankReport r;
  r.mu = mu;
  r.nu = nu;
  r.sigma = sigma;
  r.tolerance = tol;
  r.min_counted_ratio = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < svd_full.singularValues().size(); ++i) {
    double sv = svd_full.singularValues()[i];
    if (sv > tol) {
      ++r.rank_full;
      r.min_counted_ratio = std::min(r.min_counted_ratio, sv / tol);
    }
  }
  for (Eigen::Index i = 0; i < svd_right.singularValues().size(); ++i)
    if (svd_right.singularValues()[i] > tol) ++r.rank_right;
  r.required = left_cols + r.rank_right;
  r.satisfied = r.rank_full == r.required;
  r.ill_conditioned = r.min_counted_ratio >= 1.0 && r.min_counted_ratio < 10.0;
  if (opts.collect_singular_values) {
    r.singular_values.assign(svd_full.singularValues().data(),
                             svd_full.singularValues().data() + svd_full.singularValues().size());
  }
  return r;
}

// ---------------------------------------------------------------------------
// ObservabilityChecker

struct ObservabilityChecker::OrderData {
  JacobianBlocks blocks;
  BlockEvaluator evaluator;
  Binding prototype;  // parameters prefilled, sized past every tape symbol
  std::vector<std::vector<SymbolId>> state_chain_ids;  // [order][state]
};

ObservabilityChecker::ObservabilityChecker(const DaeModel& m) : model_(m), builder_(m) {
  validate_model(m);
}

std::shared_ptr<const ObservabilityChecker::OrderData> ObservabilityChecker::order_data(
    int mu, int nu, bool algebraic_chains) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto key = std::make_tuple(mu, nu, algebraic_chains);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto data = std::make_shared<OrderData>();
  DerivativeStack stack = builder_.build(mu, nu);
  data->blocks = observability_blocks(stack, model_, algebraic_chains);
  data->evaluator = BlockEvaluator(data->blocks);
  std::vector<SymbolId> states = model_.states();
  for (int k = 0; k <= data->blocks.sigma; ++k) {
    std::vector<SymbolId> level;
    for (SymbolId s : states) level.push_back(model_.symbols->derivative_of(s, k));
    data->state_chain_ids.push_back(std::move(level));
  }
  std::size_t size = model_.symbols->size();
  data->prototype = Binding(size);
  for (const auto& [id, v] : model_.parameter_values) data->prototype.set(id, v);
  for (std::size_t i = 0; i < size; ++i) {
    if ((*model_.symbols)[static_cast<SymbolId>(i)].kind == SymbolKind::Time)
      data->prototype.set(static_cast<SymbolId>(i), 0.0);
  }
  cache_.emplace(key, data);
  return data;
}

namespace {

// Binds every state-derivative symbol a block matrix can reference from an
// EvalPoint, using the per-column metadata recorded at build time.
void bind_point(Binding& b, const JacobianBlocks& blocks,
                const std::vector<std::vector<SymbolId>>& state_chain_ids, const EvalPoint& pt) {
  if (pt.max_order() < blocks.sigma)
    throw RankError("evaluation point lacks derivatives up to order " +
                    std::to_string(blocks.sigma) + "; extend the point");
  for (std::size_t k = 0; k < state_chain_ids.size(); ++k) {
    const auto& level = state_chain_ids[k];
    for (std::size_t i = 0; i < level.size(); ++i)
      b.set(level[i], pt.state_derivatives[k][static_cast<Eigen::Index>(i)]);
  }
}

}  // namespace

RankReport ObservabilityChecker::check(const EvalPoint& pt, const RankOptions& opts) const {
  thread_local std::vector<double> scratch;
  const int n = model_.n();
  auto evaluate_at = [&](int mu, int nu) {
    auto data = order_data(mu, nu, opts.algebraic_chain_columns);
    Binding b = data->prototype;
    bind_point(b, data->blocks, data->state_chain_ids, pt);
    Eigen::MatrixXd M = data->evaluator.eval(b, scratch);
    return rank_condition_report(M, data->blocks.left_cols, mu, nu, data->blocks.sigma, n,
                                 opts);
  };

  if (opts.fixed_mu || opts.fixed_nu) {
    int mu = opts.fixed_mu.value_or(opts.fixed_nu.value_or(0));
    int nu = opts.fixed_nu.value_or(mu);
    return evaluate_at(mu, nu);
  }

  int max_order = opts.max_order >= 0 ? opts.max_order : n;
  RankReport report;
  int prev_recoverable = -1;
  int stalled = 0;
  for (int k = 0; k <= max_order; ++k) {
    report = evaluate_at(k, k);
    if (report.satisfied) return report;
    // Image growth in the recoverable directions; the count can pause for an
    // order before jumping, so require a sustained plateau before stopping.
    int recoverable = report.rank_full - report.rank_right;
    stalled = (k > 0 && recoverable == prev_recoverable) ? stalled + 1 : 0;
    if (stalled >= 4) return report;
    prev_recoverable = recoverable;
  }
  return report;
}

// ---------------------------------------------------------------------------
// IdentifiabilityChecker

struct IdentifiabilityChecker::OrderData {
  JacobianBlocks blocks;
  BlockEvaluator evaluator;
  Binding prototype;
  std::vector<std::vector<SymbolId>> state_chain_ids;
};

IdentifiabilityChecker::IdentifiabilityChecker(const DaeModel& m,
                                               const std::vector<std::string>& theta_names)
    : IdentifiabilityChecker(augment(m, theta_names)) {}

IdentifiabilityChecker::IdentifiabilityChecker(const AugmentedModel& am)
    : augmented_(am), builder_(am) {
  validate_model(am.base);
}

std::shared_ptr<const IdentifiabilityChecker::OrderData> IdentifiabilityChecker::order_data(
    int mu, int nu, bool algebraic_chains) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto key = std::make_tuple(mu, nu, algebraic_chains);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto data = std::make_shared<OrderData>();
  DerivativeStack stack = builder_.build(mu, nu);
  data->blocks = identifiability_blocks(stack, augmented_.base, augmented_.free_parameters,
                                        algebraic_chains);
  data->evaluator = BlockEvaluator(data->blocks);
  std::vector<SymbolId> states = augmented_.base.states();
  for (int k = 0; k <= data->blocks.sigma; ++k) {
    std::vector<SymbolId> level;
    for (SymbolId s : states)
      level.push_back(augmented_.base.symbols->derivative_of(s, k));
    data->state_chain_ids.push_back(std::move(level));
  }
  std::size_t size = augmented_.base.symbols->size();
  data->prototype = Binding(size);
  for (const auto& [id, v] : augmented_.base.parameter_values) data->prototype.set(id, v);
  for (std::size_t i = 0; i < size; ++i) {
    if ((*augmented_.base.symbols)[static_cast<SymbolId>(i)].kind == SymbolKind::Time)
      data->prototype.set(static_cast<SymbolId>(i), 0.0);
  }
  cache_.emplace(key, data);
  return data;
}

RankReport IdentifiabilityChecker::check(const EvalPoint& pt, const RankOptions& opts) const {
  thread_local std::vector<double> scratch;
  const int n = augmented_.base.n();
  const int p = augmented_.p();
  const int q = augmented_.base.q();
  if (static_cast<int>(pt.theta.size()) != p)
    throw RankError("evaluation point carries " + std::to_string(pt.theta.size()) +
                    " parameter values, expected " + std::to_string(p));
  if (q == 0) {
    RankReport r;
    r.satisfied = (p == 0);
    r.required = p;
    return r;
  }

  auto evaluate_at = [&](int mu, int nu) {
    auto data = order_data(mu, nu, opts.algebraic_chain_columns);
    Binding b = data->prototype;
    bind_point(b, data->blocks, data->state_chain_ids, pt);
    for (int j = 0; j < p; ++j) b.set(augmented_.free_parameters[static_cast<std::size_t>(j)],
                                      pt.theta[j]);
    Eigen::MatrixXd M = data->evaluator.eval(b, scratch);
    return rank_condition_report(M, data->blocks.left_cols, mu, nu, data->blocks.sigma, n,
                                 opts);
  };

  if (opts.fixed_mu || opts.fixed_nu) {
    int mu = opts.fixed_mu.value_or(opts.fixed_nu.value_or(0));
    int nu = opts.fixed_nu.value_or(mu);
    return evaluate_at(mu, nu);
  }

  int max_order = opts.max_order >= 0 ? opts.max_order : n + p;
  RankReport report;
  int prev_recoverable = -1;
  int stalled = 0;
  for (int k = 0; k <= max_order; ++k) {
    report = evaluate_at(k, k);
    if (report.satisfied) return report;
    int recoverable = report.rank_full - report.rank_right;
    stalled = (k > 0 && recoverable == prev_recoverable) ? stalled + 1 : 0;
    if (stalled >= 4) return report;
    prev_recoverable = recoverable;
  }
  return report;
}

RankReport check_observability(const DaeModel& m, const EvalPoint& pt, const RankOptions& opts) {
  return ObservabilityChecker(m).check(pt, opts);
}

RankReport check_identifiability(const AugmentedModel& am, const EvalPoint& pt,
                                 const RankOptions& opts) {
  return IdentifiabilityChecker(am).check(pt, opts);
}

// ---------------------------------------------------------------------------
// Lie-derivative observability (pure ODE)

RankReport lie_observability(const DaeModel& m, const EvalPoint& pt, int nu,
                             const RankOptions& opts) {
  if (m.n2() != 0 || !m.has_semi_explicit())
    throw RankError("Lie-derivative test requires a pure ODE model (no algebraic states)");
  const int n = m.n1();
  const std::vector<SymbolId> states = m.states();

  // Stacked Lie derivatives of each output along f1, then their Jacobian.
  std::vector<Expr> lie = m.outputs;
  std::vector<Expr> rows;
  rows.reserve(static_cast<std::size_t>(m.q() * (nu + 1) * n));
  auto emit = [&](const std::vector<Expr>& level) {
    for (const Expr& e : level)
      for (SymbolId s : states) rows.push_back(diff_partial(e, s));
  };
  emit(lie);
  for (int k = 1; k <= nu; ++k) {
    std::vector<Expr> next;
    next.reserve(lie.size());
    for (const Expr& e : lie) {
      Expr sum = Expr::constant(0.0);
      for (int i = 0; i < n; ++i)
        sum = sum + diff_partial(e, states[static_cast<std::size_t>(i)]) *
                        m.f1[static_cast<std::size_t>(i)];
      next.push_back(sum);
    }
    lie = std::move(next);
    emit(lie);
  }

  CompiledExprs compiled{rows};
  Binding b = m.parameter_binding();
  b.resize(static_cast<std::size_t>(compiled.max_symbol_id()) + 1);
  if (pt.state_derivatives.empty()) throw RankError("evaluation point has no state vector");
  for (int i = 0; i < n; ++i)
    b.set(states[static_cast<std::size_t>(i)], pt.state_derivatives[0][i]);

  std::vector<double> scratch;
  std::vector<double> out(rows.size());
  compiled.eval(b.values(), b.mask(), out, scratch);
  const int nrows = m.q() * (nu + 1);
  Eigen::MatrixXd Psi(nrows, n);
  for (int r = 0; r < nrows; ++r)
    for (int c = 0; c < n; ++c)
      Psi(r, c) = out[static_cast<std::size_t>(r) * static_cast<std::size_t>(n) +
                      static_cast<std::size_t>(c)];

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Psi);
  double norm2 = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
  double tol = opts.tolerance ? *opts.tolerance
                              : default_tolerance_from_norm(norm2, nu + 1, n);
  RankReport r;
  r.mu = 0;
  r.nu = nu;
  r.sigma = nu + 1;
  r.tolerance = tol;
  r.min_counted_ratio = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    double sv = svd.singularValues()[i];
    if (sv > tol) {
      ++r.rank_full;
      r.min_counted_ratio = std::min(r.min_counted_ratio, sv / tol);
    }
  }
  r.rank_right = 0;
  r.required = n;
  r.satisfied = r.rank_full == n;
  r.ill_conditioned = r.min_counted_ratio >= 1.0 && r.min_counted_ratio < 10.0;
  if (opts.collect_singular_values) {
    r.singular_values.assign(svd.singularValues().data(),
                             svd.singularValues().data() + svd.singularValues().size());
  }
  return r;
}

}  // namespace daeident
