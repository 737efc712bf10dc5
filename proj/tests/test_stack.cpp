#include "daeident/stack.hpp"

#include <random>
#include <set>

#include <Eigen/Dense>

#include "doctest.h"

using namespace daeident;

namespace {

DaeModel reactor_with_output(const std::string& sensor) {
  DaeModel m;
  m.differential_states = {m.symbols->declare("x1", SymbolKind::State),
                           m.symbols->declare("x2", SymbolKind::State)};
  m.algebraic_states = {m.symbols->declare("x3", SymbolKind::AlgebraicState)};
  auto param = [&](const char* n, double v) {
    SymbolId id = m.symbols->declare(n, SymbolKind::Parameter);
    m.parameters.push_back(id);
    m.parameter_values[id] = v;
  };
  param("c0", 1.0);
  param("T0", 350.0);
  param("T_c", 305.0);
  param("k1", 1.0);
  param("k2", 209.205);
  param("k3", 2.0921);
  param("k4", 8750.3);
  param("k5", 7.2e10);
  m.f1 = {parse_expression("k1*(c0 - x1) - x3", *m.symbols),
          parse_expression("k1*(T0 - x2) + k2*x3 + k3*(T_c - x2)", *m.symbols)};
  m.f2 = {parse_expression("x3 - k5*exp(-k4/x2)*x1", *m.symbols)};
  m.outputs = {parse_expression(sensor, *m.symbols)};
  validate_model(m);
  return m;
}

// Binding with every state derivative up to `order` drawn at random and
// parameters at their known values.
Binding random_binding(const DaeModel& m, int order, std::mt19937& rng) {
  std::uniform_real_distribution<double> u(0.25, 2.5);
  Binding b = m.parameter_binding();
  b.resize(m.symbols->size() + 64);
  for (SymbolId s : m.states()) {
    b.set(s, u(rng));
    for (int k = 1; k <= order; ++k) b.set(m.symbols->derivative_of(s, k), u(rng));
  }
  b.resize(m.symbols->size());
  return b;
}

}  // namespace

TEST_CASE("reactor stack dimensions and output chain") {
  DaeModel m = reactor_with_output("x1");
  DerivativeStack s = build_stack(m, 2, 2);
  CHECK(s.fbar.size() == 9);
  CHECK(s.hbar.size() == 3);
  CHECK(s.sigma == 3);
  // output chain is x1, x1', x1''
  CHECK(structurally_equal(s.hbar[0], parse_expression("x1", *m.symbols)));
  CHECK(structurally_equal(s.hbar[1], parse_expression("x1'", *m.symbols)));
  CHECK(structurally_equal(s.hbar[2], parse_expression("x1''", *m.symbols)));

  AugmentedModel am = augment(m, std::vector<std::string>{"T_c"});
  DerivativeStack sa = build_stack(am, 2, 2);
  CHECK(sa.fbar.size() == 12);
  // the promoted-parameter rows are pinned to the zero constant
  CHECK(sa.f_level(0)[3].is_zero());
  CHECK(sa.f_level(1)[3].is_zero());
  // no derivative of the promoted parameter survives anywhere in the stack
  SymbolId tc = *m.symbols->lookup("T_c");
  for (const Expr& row : sa.fbar) {
    std::set<SymbolId> syms;
    collect_symbols(row, syms);
    for (SymbolId id : syms) {
      const Symbol& sym = (*m.symbols)[id];
      if (sym.kind == SymbolKind::Derivative) CHECK(sym.base != tc);
    }
  }
}

TEST_CASE("zero-order stack is the model itself") {
  DaeModel m = reactor_with_output("x2");
  DerivativeStack s = build_stack(m, 0, 0);
  CHECK(s.fbar.size() == 3);
  CHECK(s.hbar.size() == 1);
  CHECK(s.sigma == 1);
  DaeModel f = to_implicit(m);
  for (int i = 0; i < 3; ++i)
    CHECK(structurally_equal(s.fbar[static_cast<std::size_t>(i)],
                             f.implicit_residuals[static_cast<std::size_t>(i)]));
  CHECK(structurally_equal(s.hbar[0], m.outputs[0]));
}

TEST_CASE("property: each stack level is the total derivative of the previous one") {
  DaeModel m = reactor_with_output("x2");
  StackBuilder builder(m);
  DerivativeStack s = builder.build(3, 3);
  std::mt19937 rng(23);
  int checks = 0;
  for (int rep = 0; rep < 250; ++rep) {
    Binding b = random_binding(m, 6, rng);
    for (int k = 0; k + 1 <= 3; ++k) {
      auto level = s.f_level(k);
      auto next = s.f_level(k + 1);
      for (std::size_t r = 0; r < level.size(); ++r) {
        Expr d = pin_parameter_derivatives(diff_total(level[r], *m.symbols), *m.symbols);
        double lhs = evaluate(d, *m.symbols, b);
        double rhs = evaluate(next[r], *m.symbols, b);
        CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
        ++checks;
      }
    }
  }
  CHECK(checks >= 1000);
}

TEST_CASE("observability blocks of an ODE have the unit lower-triangular derivative part") {
  DaeModel m;
  std::vector<SymbolId> xs = {m.symbols->declare("x1", SymbolKind::State),
                              m.symbols->declare("x2", SymbolKind::State)};
  m.differential_states = xs;
  m.f1 = {parse_expression("x2", *m.symbols), parse_expression("-x1 + x2^2", *m.symbols)};
  m.outputs = {parse_expression("x1", *m.symbols)};
  validate_model(m);

  const int mu = 2, nu = 2, n = 2;
  DerivativeStack s = build_stack(m, mu, nu);
  JacobianBlocks blocks = observability_blocks(s, m);
  CHECK(blocks.left_cols == n);
  CHECK(blocks.right_cols == n * s.sigma);

  BlockEvaluator eval(blocks);
  std::mt19937 rng(3);
  Binding b = random_binding(m, s.sigma, rng);
  std::vector<double> scratch;
  Eigen::MatrixXd M = eval.eval(b, scratch);
  Eigen::MatrixXd dFdw = M.topRightCorner(n * (mu + 1), n * s.sigma);
  for (int kb = 0; kb < mu + 1; ++kb)
    for (int jb = 0; jb < s.sigma; ++jb) {
      Eigen::MatrixXd blk = dFdw.block(kb * n, jb * n, n, n);
      if (jb == kb) CHECK((blk + Eigen::MatrixXd::Identity(n, n)).norm() == doctest::Approx(0.0));
      if (jb > kb) CHECK(blk.norm() == doctest::Approx(0.0));
    }

  // single-output, zero-order case: one gradient row at the bottom
  DerivativeStack s0 = build_stack(m, 0, 0);
  JacobianBlocks b0 = observability_blocks(s0, m);
  CHECK(b0.rows == 3);
  BlockEvaluator ev0(b0);
  Eigen::MatrixXd M0 = ev0.eval(b, scratch);
  CHECK(M0(2, 0) == doctest::Approx(1.0));  // d h / d x1
  CHECK(M0(2, 1) == doctest::Approx(0.0));
  CHECK(M0.row(2).tail(2).norm() == doctest::Approx(0.0));
}

TEST_CASE("identifiability blocks: reactor coolant coupling enters one residual row") {
  DaeModel m = reactor_with_output("x1");
  AugmentedModel am = augment(m, std::vector<std::string>{"T_c"});
  DerivativeStack s = build_stack(am, 0, 0);
  JacobianBlocks blocks = identifiability_blocks(s, am.base, am.free_parameters);
  CHECK(blocks.left_cols == 1);
  CHECK(blocks.right_cols == 3 * (s.sigma + 1));
  // level 0: dF/dtheta = [0, k3, 0, 0(theta-dot row)]
  CHECK(blocks.at(0, 0).is_zero());
  REQUIRE(blocks.at(1, 0).kind() == ExprKind::SymbolRef);
  CHECK((*m.symbols)[blocks.at(1, 0).symbol_id()].name == "k3");
  CHECK(blocks.at(2, 0).is_zero());
  CHECK(blocks.at(3, 0).is_zero());
}

TEST_CASE("identifiability blocks with no parameters degenerate to an empty left part") {
  DaeModel m = reactor_with_output("x2");
  DerivativeStack s = build_stack(m, 1, 1);
  JacobianBlocks blocks = identifiability_blocks(s, m, {});
  CHECK(blocks.left_cols == 0);
  CHECK(blocks.right_cols == 3 * (s.sigma + 1));
}

TEST_CASE("property: block entries match central finite differences of the stacked rows") {
  DaeModel m = reactor_with_output("x2");
  StackBuilder builder(m);
  DerivativeStack s = builder.build(1, 1);
  JacobianBlocks blocks = observability_blocks(s, m);
  std::vector<Expr> rows = s.fbar;
  rows.insert(rows.end(), s.hbar.begin(), s.hbar.end());
  std::vector<SymbolId> cols = blocks.left_symbols;
  cols.insert(cols.end(), blocks.right_symbols.begin(), blocks.right_symbols.end());

  std::mt19937 rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    Binding b = random_binding(m, s.sigma, rng);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        double exact = evaluate(blocks.at(static_cast<int>(r), static_cast<int>(c)),
                                *m.symbols, b);
        double v = b.get(cols[c]);
        double h = 1e-6 * std::max(1.0, std::abs(v));
        Binding bp = b;
        bp.set(cols[c], v + h);
        double fp = evaluate(rows[r], *m.symbols, bp);
        bp.set(cols[c], v - h);
        double fm = evaluate(rows[r], *m.symbols, bp);
        double fd = (fp - fm) / (2 * h);
        CHECK(std::abs(fd - exact) <= 1e-6 * std::max({1.0, std::abs(exact), std::abs(fp)}));
      }
    }
  }
}

TEST_CASE("linear models have point-independent observability blocks") {
  // x1' = a11 x1 + a12 x2, 0 = a21 x1 + a22 x2 as a hand-built linear DAE
  DaeModel m;
  SymbolId x1 = m.symbols->declare("x1", SymbolKind::State);
  SymbolId x2 = m.symbols->declare("x2", SymbolKind::AlgebraicState);
  m.differential_states = {x1};
  m.algebraic_states = {x2};
  m.f1 = {parse_expression("x1 - 2*x2", *m.symbols)};
  m.f2 = {parse_expression("3*x1 + x2", *m.symbols)};
  m.outputs = {parse_expression("x1", *m.symbols)};
  validate_model(m);

  DerivativeStack s = build_stack(m, 2, 2);
  JacobianBlocks blocks = observability_blocks(s, m);
  BlockEvaluator eval(blocks);
  std::mt19937 rng(9);
  std::vector<double> scratch;
  Binding b1 = random_binding(m, s.sigma, rng);
  Binding b2 = random_binding(m, s.sigma, rng);
  Eigen::MatrixXd M1 = eval.eval(b1, scratch);
  Eigen::MatrixXd M2 = eval.eval(b2, scratch);
  CHECK((M1 - M2).norm() == 0.0);

  // level-k rows evaluate to A x^(k) - E x^(k+1)
  Eigen::MatrixXd A(2, 2), E(2, 2);
  A << 1, -2, 3, 1;
  E << 1, 0, 0, 0;
  for (int k = 0; k <= 2; ++k) {
    Eigen::VectorXd xk(2), xk1(2);
    xk << b1.get(m.symbols->derivative_of(x1, k)), b1.get(m.symbols->derivative_of(x2, k));
    xk1 << b1.get(m.symbols->derivative_of(x1, k + 1)),
        b1.get(m.symbols->derivative_of(x2, k + 1));
    Eigen::VectorXd expected = A * xk - E * xk1;
    auto level = s.f_level(k);
    for (int i = 0; i < 2; ++i)
      CHECK(evaluate(level[static_cast<std::size_t>(i)], *m.symbols, b1) ==
            doctest::Approx(expected[i]).epsilon(1e-12));
  }
}
