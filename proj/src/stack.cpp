#include "daeident/stack.hpp"

#include <algorithm>
#include <set>

namespace daeident {

std::span<const Expr> DerivativeStack::f_level(int k) const {
  auto rows = static_cast<std::size_t>(residual_rows_per_level);
  return {fbar.data() + static_cast<std::size_t>(k) * rows, rows};
}

std::span<const Expr> DerivativeStack::h_level(int k) const {
  auto rows = static_cast<std::size_t>(output_rows_per_level);
  return {hbar.data() + static_cast<std::size_t>(k) * rows, rows};
}

StackBuilder::StackBuilder(const DaeModel& m) : model_(to_implicit(m)) {
  f_levels_.push_back(model_.implicit_residuals);
  h_levels_.push_back(model_.outputs);
}

StackBuilder::StackBuilder(const AugmentedModel& am) : model_(to_implicit(am.base)) {
  pinned_ = am.free_parameters;
  for (const Expr& e : am.extra_residuals) model_.implicit_residuals.push_back(pin(e));
  f_levels_.push_back(model_.implicit_residuals);
  h_levels_.push_back(model_.outputs);
}

Expr StackBuilder::pin(const Expr& e) const {
  // Every parameter is constant in time: the promoted ones by the zero
  // dynamics appended during augmentation, the known ones as fixed data.
  return pin_parameter_derivatives(e, *model_.symbols);
}

void StackBuilder::ensure_f(int levels) {
  while (static_cast<int>(f_levels_.size()) < levels) {
    const std::vector<Expr>& prev = f_levels_.back();
    std::vector<Expr> next;
    next.reserve(prev.size());
    for (const Expr& row : prev) next.push_back(pin(diff_total(row, *model_.symbols)));
    f_levels_.push_back(std::move(next));
  }
}

void StackBuilder::ensure_h(int levels) {
  while (static_cast<int>(h_levels_.size()) < levels) {
    const std::vector<Expr>& prev = h_levels_.back();
    std::vector<Expr> next;
    next.reserve(prev.size());
    for (const Expr& row : prev) next.push_back(pin(diff_total(row, *model_.symbols)));
    h_levels_.push_back(std::move(next));
  }
}

DerivativeStack StackBuilder::build(int mu, int nu) {
  if (mu < 0 || nu < 0) throw ModelError("stack orders must be nonnegative");
  ensure_f(mu + 1);
  ensure_h(nu + 1);
  DerivativeStack s;
  s.mu = mu;
  s.nu = nu;
  s.sigma = std::max(mu + 1, nu);
  s.residual_rows_per_level = static_cast<int>(f_levels_[0].size());
  s.output_rows_per_level = static_cast<int>(h_levels_[0].size());
  for (int k = 0; k <= mu; ++k)
    s.fbar.insert(s.fbar.end(), f_levels_[static_cast<std::size_t>(k)].begin(),
                  f_levels_[static_cast<std::size_t>(k)].end());
  for (int k = 0; k <= nu; ++k)
    s.hbar.insert(s.hbar.end(), h_levels_[static_cast<std::size_t>(k)].begin(),
                  h_levels_[static_cast<std::size_t>(k)].end());
  return s;
}

DerivativeStack build_stack(const DaeModel& m, int mu, int nu) {
  return StackBuilder(m).build(mu, nu);
}

DerivativeStack build_stack(const AugmentedModel& am, int mu, int nu) {
  return StackBuilder(am).build(mu, nu);
}

namespace {

JacobianBlocks make_blocks(const DerivativeStack& s, const std::vector<SymbolId>& left,
                           const std::vector<SymbolId>& right,
                           std::vector<std::pair<int, int>> right_meta) {
  JacobianBlocks b;
  b.mu = s.mu;
  b.nu = s.nu;
  b.sigma = s.sigma;
  b.left_symbols = left;
  b.right_symbols = right;
  b.right_meta = std::move(right_meta);
  b.left_cols = static_cast<int>(left.size());
  b.right_cols = static_cast<int>(right.size());
  b.rows = static_cast<int>(s.fbar.size() + s.hbar.size());
  b.entries.reserve(static_cast<std::size_t>(b.rows) *
                    static_cast<std::size_t>(b.left_cols + b.right_cols));
  auto emit_row = [&](const Expr& row) {
    for (SymbolId c : left) b.entries.push_back(diff_partial(row, c));
    for (SymbolId c : b.right_symbols) b.entries.push_back(diff_partial(row, c));
  };
  for (const Expr& row : s.fbar) emit_row(row);
  for (const Expr& row : s.hbar) emit_row(row);
  return b;
}

// Level-major state-derivative columns; algebraic-state chains optional.
void state_derivative_symbols(const DaeModel& m, int from_order, int to_order,
                              bool algebraic_chains, std::vector<SymbolId>& ids,
                              std::vector<std::pair<int, int>>& meta) {
  std::vector<SymbolId> states = m.states();
  const int n1 = m.n1();
  for (int k = from_order; k <= to_order; ++k) {
    for (int i = 0; i < static_cast<int>(states.size()); ++i) {
      if (!algebraic_chains && k >= 1 && i >= n1) continue;
      ids.push_back(m.symbols->derivative_of(states[static_cast<std::size_t>(i)], k));
      meta.emplace_back(k, i);
    }
  }
}

}  // namespace

JacobianBlocks observability_blocks(const DerivativeStack& s, const DaeModel& m,
                                    bool algebraic_chains) {
  std::vector<SymbolId> right;
  std::vector<std::pair<int, int>> meta;
  state_derivative_symbols(m, 1, s.sigma, algebraic_chains, right, meta);
  return make_blocks(s, m.states(), right, std::move(meta));
}

JacobianBlocks identifiability_blocks(const DerivativeStack& s, const DaeModel& base,
                                      const std::vector<SymbolId>& theta,
                                      bool algebraic_chains) {
  std::vector<SymbolId> right;
  std::vector<std::pair<int, int>> meta;
  state_derivative_symbols(base, 0, s.sigma, algebraic_chains, right, meta);
  return make_blocks(s, theta, right, std::move(meta));
}

BlockEvaluator::BlockEvaluator(const JacobianBlocks& blocks)
    : compiled_(blocks.entries), rows_(blocks.rows),
      cols_(blocks.left_cols + blocks.right_cols) {}

Eigen::MatrixXd BlockEvaluator::eval(const Binding& binding, std::vector<double>& scratch) const {
  std::vector<double> out(static_cast<std::size_t>(rows_) * static_cast<std::size_t>(cols_));
  compiled_.eval(binding.values(), binding.mask(), out, scratch);
  Eigen::MatrixXd M(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c)
      M(r, c) = out[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols_) +
                    static_cast<std::size_t>(c)];
  return M;
}

}  // namespace daeident
