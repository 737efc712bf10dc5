#pragma once

// Stacked derivative arrays: the residuals and outputs of a model together
// with their successive total time derivatives, and the partitioned
// Jacobians used by the observability and identifiability rank tests.

#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "daeident/model.hpp"

namespace daeident {

struct DerivativeStack {
  std::vector<Expr> fbar;  // residual rows, level-major: level 0 first
  std::vector<Expr> hbar;  // output rows, level-major
  int mu = 0;
  int nu = 0;
  int sigma = 1;  // max(mu + 1, nu)
  int residual_rows_per_level = 0;
  int output_rows_per_level = 0;

  std::span<const Expr> f_level(int k) const;
  std::span<const Expr> h_level(int k) const;
};

// Builds stacks incrementally and caches the levels, so raising the order
// reuses all previously differentiated rows.  For augmented models the
// derivatives of promoted parameters are replaced by the zero constant as
// each level is formed (the promoted parameters are constant in time).
class StackBuilder {
 public:
  explicit StackBuilder(const DaeModel& m);
  explicit StackBuilder(const AugmentedModel& am);

  DerivativeStack build(int mu, int nu);

  const DaeModel& model() const { return model_; }
  const std::vector<SymbolId>& pinned_parameters() const { return pinned_; }

 private:
  DaeModel model_;  // implicit residual form (augmented rows appended)
  std::vector<SymbolId> pinned_;
  std::vector<std::vector<Expr>> f_levels_, h_levels_;

  Expr pin(const Expr& e) const;
  void ensure_f(int levels);
  void ensure_h(int levels);
};

DerivativeStack build_stack(const DaeModel& m, int mu, int nu);
DerivativeStack build_stack(const AugmentedModel& am, int mu, int nu);

struct JacobianBlocks {
  std::vector<Expr> entries;  // row-major, rows x (left_cols + right_cols)
  int rows = 0;
  int left_cols = 0;
  int right_cols = 0;
  std::vector<SymbolId> left_symbols;   // x (observability) or theta (identifiability)
  std::vector<SymbolId> right_symbols;  // w or z block symbols, level-major
  // (derivative order, index into states()) per right column
  std::vector<std::pair<int, int>> right_meta;
  int mu = 0, nu = 0, sigma = 1;

  const Expr& at(int r, int c) const {
    return entries[static_cast<std::size_t>(r) * static_cast<std::size_t>(left_cols + right_cols) +
                   static_cast<std::size_t>(c)];
  }
};

// Partials of (fbar, hbar) with respect to x (left) and w = (x', ..., x^(sigma)).
// With algebraic_chains false the derivative columns of algebraic states are
// omitted (their order-0 columns remain).
JacobianBlocks observability_blocks(const DerivativeStack& s, const DaeModel& m,
                                    bool algebraic_chains = true);

// Partials with respect to theta (left) and z = (x, x', ..., x^(sigma)).
// theta may be empty; the stack must have been built with those parameters
// promoted (or the model unaugmented when theta is empty).
JacobianBlocks identifiability_blocks(const DerivativeStack& s, const DaeModel& base,
                                      const std::vector<SymbolId>& theta,
                                      bool algebraic_chains = true);

// Compiled numeric evaluator for a block matrix; eval is thread-safe with
// caller-provided scratch.
class BlockEvaluator {
 public:
  BlockEvaluator() = default;
  explicit BlockEvaluator(const JacobianBlocks& blocks);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  Eigen::MatrixXd eval(const Binding& binding, std::vector<double>& scratch) const;

 private:
  CompiledExprs compiled_;
  int rows_ = 0, cols_ = 0;
};

}  // namespace daeident
