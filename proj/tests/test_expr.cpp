#include "daeident/expr.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace daeident;

namespace {

struct ReactorSymbols {
  SymbolTable table;
  SymbolId x1, x2, x3, c0, T0, Tc, k1, k2, k3, k4, k5;
  ReactorSymbols() {
    x1 = table.declare("x1", SymbolKind::State);
    x2 = table.declare("x2", SymbolKind::State);
    x3 = table.declare("x3", SymbolKind::AlgebraicState);
    c0 = table.declare("c0", SymbolKind::Parameter);
    T0 = table.declare("T0", SymbolKind::Parameter);
    Tc = table.declare("T_c", SymbolKind::Parameter);
    k1 = table.declare("k1", SymbolKind::Parameter);
    k2 = table.declare("k2", SymbolKind::Parameter);
    k3 = table.declare("k3", SymbolKind::Parameter);
    k4 = table.declare("k4", SymbolKind::Parameter);
    k5 = table.declare("k5", SymbolKind::Parameter);
  }
  Binding values() const {
    Binding b(table.size());
    b.set(c0, 1.0);
    b.set(T0, 350.0);
    b.set(Tc, 305.0);
    b.set(k1, 1.0);
    b.set(k2, 209.205);
    b.set(k3, 2.0921);
    b.set(k4, 8750.3);
    b.set(k5, 7.2e10);
    return b;
  }
};

// Random expression trees for the differentiation/simplification properties.
// Functions and denominators are kept in safe domains.
class TreeGen {
 public:
  TreeGen(std::mt19937& rng, const std::vector<SymbolId>& symbols)
      : rng_(rng), symbols_(symbols) {}

  Expr tree(int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 7);
    switch (pick(rng_)) {
      case 0: return Expr::constant(constant());
      case 1: return Expr::symbol(symbol());
      case 2: return tree(depth - 1) + tree(depth - 1);
      case 3: return tree(depth - 1) * tree(depth - 1);
      case 4: return -tree(depth - 1);
      case 5: {
        // bounded-away-from-zero denominator
        Expr den = Expr::constant(1.0) + pow(tree(depth - 1), Expr::constant(2.0));
        return tree(depth - 1) / den;
      }
      case 6: {
        std::uniform_int_distribution<int> deg(2, 3);
        return pow(tree(depth - 1), Expr::constant(static_cast<double>(deg(rng_))));
      }
      default: {
        std::uniform_int_distribution<int> f(0, 3);
        Func funcs[] = {Func::Sin, Func::Cos, Func::Atan, Func::Exp};
        return apply(funcs[f(rng_)], Expr::constant(0.5) * tree(depth - 1));
      }
    }
  }

  Expr polynomial(int depth) {
    std::uniform_int_distribution<int> pick(0, depth <= 0 ? 1 : 4);
    switch (pick(rng_)) {
      case 0: return Expr::constant(constant());
      case 1: return Expr::symbol(symbol());
      case 2: return polynomial(depth - 1) + polynomial(depth - 1);
      case 3: return polynomial(depth - 1) * polynomial(depth - 1);
      default: return pow(polynomial(depth - 1), Expr::constant(2.0));
    }
  }

  double constant() {
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    return d(rng_);
  }
  SymbolId symbol() {
    std::uniform_int_distribution<std::size_t> d(0, symbols_.size() - 1);
    return symbols_[d(rng_)];
  }

 private:
  std::mt19937& rng_;
  const std::vector<SymbolId>& symbols_;
};

}  // namespace

TEST_CASE("parse reactor rate expression") {
  ReactorSymbols r;
  Expr e = parse_expression("k1*(c0-x1) - x3", r.table);
  std::set<SymbolId> syms;
  collect_symbols(e, syms);
  CHECK(syms == std::set<SymbolId>{r.k1, r.c0, r.x1, r.x3});
  CHECK(e.kind() == ExprKind::Add);
}

TEST_CASE("parse angle measurement") {
  ReactorSymbols r;
  Expr e = parse_expression("atan(-x1/x2)", r.table);
  REQUIRE(e.kind() == ExprKind::Call);
  CHECK(e.func() == Func::Atan);
  CHECK(e.child(0).kind() == ExprKind::Div);
}

TEST_CASE("parse sum of powers") {
  SymbolTable t;
  t.declare("x1", SymbolKind::State);
  t.declare("x2", SymbolKind::State);
  t.declare("L", SymbolKind::Parameter);
  Expr e = parse_expression("x1^2 + x2^2 - L^2", t);
  CHECK(e.kind() == ExprKind::Add);
  Binding b(t.size());
  b.set(*t.lookup("x1"), 3.0);
  b.set(*t.lookup("x2"), 4.0);
  b.set(*t.lookup("L"), 5.0);
  CHECK(evaluate(e, t, b) == doctest::Approx(0.0));
}

TEST_CASE("parse errors carry positions and names") {
  SymbolTable t;
  t.declare("x", SymbolKind::State);
  CHECK_THROWS_AS(parse_expression("x + ", t), ParseError);
  CHECK_THROWS_AS(parse_expression("x * y", t), ParseError);
  CHECK_THROWS_AS(parse_expression("foo(x)", t), ParseError);
  CHECK_THROWS_AS(parse_expression("x + )", t), ParseError);
  CHECK_THROWS_WITH_AS(parse_expression("x * y", t),
                       doctest::Contains("unknown symbol 'y'"), ParseError);
}

TEST_CASE("derivative symbols parse and print") {
  SymbolTable t;
  SymbolId x = t.declare("x1", SymbolKind::State);
  Expr e = parse_expression("x1'' + x1'", t);
  std::set<SymbolId> syms;
  collect_symbols(e, syms);
  CHECK(syms.size() == 2);
  for (SymbolId s : syms) {
    CHECK(t[s].kind == SymbolKind::Derivative);
    CHECK(t[s].base == x);
  }
  CHECK(to_string(e, t) == "x1'' + x1'");
}

TEST_CASE("partial derivative of product-quotient") {
  SymbolTable t;
  SymbolId x1 = t.declare("x1", SymbolKind::State);
  SymbolId x5 = t.declare("x5", SymbolKind::AlgebraicState);
  t.declare("m", SymbolKind::Parameter);
  Expr e = parse_expression("x1*x5/m", t);
  Expr d = diff_partial(e, x5);
  CHECK(structurally_equal(d, parse_expression("x1/m", t)));
  CHECK(structurally_equal(diff_partial(e, t.declare("unused", SymbolKind::Parameter)),
                           Expr::constant(0.0)));
  (void)x1;
}

TEST_CASE("partial derivative of the reaction-rate term against finite differences") {
  ReactorSymbols r;
  Expr e = parse_expression("k5*exp(-k4/x2)*x1", r.table);
  Expr d = diff_partial(e, r.x2);
  Binding b = r.values();
  b.set(r.x1, 0.5);
  b.set(r.x3, 0.4995);
  const double h = 1e-4;
  b.set(r.x2, 350.0 + h);
  double fp = evaluate(e, r.table, b);
  b.set(r.x2, 350.0 - h);
  double fm = evaluate(e, r.table, b);
  b.set(r.x2, 350.0);
  double exact = evaluate(d, r.table, b);
  double fd = (fp - fm) / (2 * h);
  CHECK(exact == doctest::Approx(fd).epsilon(1e-6));
  // matches the closed form k5*exp(-k4/x2)*x1*k4/x2^2
  Expr closed = parse_expression("k5*exp(-k4/x2)*x1*k4/x2^2", r.table);
  CHECK(exact == doctest::Approx(evaluate(closed, r.table, b)).epsilon(1e-12));
}

TEST_CASE("partial derivative of a constant is zero") {
  SymbolTable t;
  SymbolId x = t.declare("x", SymbolKind::State);
  CHECK(structurally_equal(diff_partial(Expr::constant(4.25), x), Expr::constant(0.0)));
}

TEST_CASE("total derivative chain rule") {
  SymbolTable t;
  SymbolId x1 = t.declare("x1", SymbolKind::State);
  Expr e = parse_expression("x1^2", t);
  Expr d = diff_total(e, t);
  CHECK(structurally_equal(d, parse_expression("2*x1*x1'", t)));
  (void)x1;
}

TEST_CASE("total derivative of the implicit reactor row") {
  ReactorSymbols r;
  Expr row = parse_expression("k1*(c0-x1) - x3 - x1'", r.table);
  // With the constant parameters pinned, the row derivative reduces to the
  // displayed closed form.
  Expr d = pin_parameter_derivatives(diff_total(row, r.table), r.table);
  Expr expected = parse_expression("-k1*x1' - x3' - x1''", r.table);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    Binding b = r.values();
    for (SymbolId s :
         {r.x1, r.x3, *r.table.lookup("x1'"), *r.table.lookup("x3'"), *r.table.lookup("x1''")})
      b.set(s, u(rng));
    CHECK(evaluate(d, r.table, b) ==
          doctest::Approx(evaluate(expected, r.table, b)).epsilon(1e-12));
  }
}

TEST_CASE("total derivative of a parameter mints its derivative symbol") {
  SymbolTable t;
  SymbolId th = t.declare("theta", SymbolKind::Parameter);
  Expr d = diff_total(Expr::symbol(th), t);
  REQUIRE(d.kind() == ExprKind::SymbolRef);
  CHECK(t[d.symbol_id()].kind == SymbolKind::Derivative);
  CHECK(t[d.symbol_id()].base == th);
  CHECK(t[d.symbol_id()].order == 1);
}

TEST_CASE("evaluate reactor residual at the printed state") {
  ReactorSymbols r;
  Expr e = parse_expression("k1*(c0-x1) - x3", r.table);
  Binding b = r.values();
  b.set(r.x1, 0.5);
  b.set(r.x2, 350.0);
  b.set(r.x3, 0.4995);
  CHECK(evaluate(e, r.table, b) == doctest::Approx(0.0005).epsilon(1e-10));
}

TEST_CASE("evaluate angle output recovers the angle") {
  SymbolTable t;
  SymbolId x1 = t.declare("x1", SymbolKind::State);
  SymbolId x2 = t.declare("x2", SymbolKind::State);
  Expr e = parse_expression("atan(-x1/x2)", t);
  const double L = 6.25, phi = 0.3;
  Binding b(t.size());
  b.set(x1, L * std::sin(phi));
  b.set(x2, -L * std::cos(phi));
  CHECK(evaluate(e, t, b) == doctest::Approx(phi).epsilon(1e-12));
}

TEST_CASE("evaluate zero constant") {
  SymbolTable t;
  Binding b(0);
  CHECK(evaluate(Expr::constant(0.0), t, b) == 0.0);
}

TEST_CASE("evaluate reports unbound symbols and domain errors") {
  SymbolTable t;
  SymbolId x = t.declare("x", SymbolKind::State);
  Binding empty(t.size());
  CHECK_THROWS_WITH_AS(evaluate(Expr::symbol(x), t, empty), doctest::Contains("unbound"),
                       EvalError);
  Expr bad = apply(Func::Log, Expr::symbol(x));
  Binding b(t.size());
  b.set(x, -1.0);
  CHECK_THROWS_WITH_AS(evaluate(bad, t, b), doctest::Contains("log(x)"), EvalError);
}

TEST_CASE("construction-time simplification") {
  ReactorSymbols r;
  SymbolId x3dot = r.table.derivative_of(r.x3, 1);
  Expr a = Expr::constant(0.0) * Expr::symbol(x3dot) + Expr::symbol(r.x1);
  CHECK(structurally_equal(a, Expr::symbol(r.x1)));
  Expr bprod = Expr::constant(1.0) * (Expr::symbol(r.k2) * Expr::symbol(r.x3));
  CHECK(structurally_equal(bprod, Expr::symbol(r.k2) * Expr::symbol(r.x3)));
  Expr folded = (Expr::constant(2.0) + Expr::constant(3.0)) * Expr::symbol(r.x1);
  REQUIRE(folded.kind() == ExprKind::Mul);
  CHECK(folded.child(0).is_constant(5.0));
  CHECK(structurally_equal(simplify(folded), folded));
}

TEST_CASE("division by the literal zero constant is rejected") {
  SymbolTable t;
  SymbolId x = t.declare("x", SymbolKind::State);
  CHECK_THROWS_AS(Expr::symbol(x) / Expr::constant(0.0), ExprError);
}

TEST_CASE("printer round-trips random trees") {
  SymbolTable t;
  std::vector<SymbolId> syms = {t.declare("a", SymbolKind::State),
                                t.declare("b", SymbolKind::State),
                                t.declare("c", SymbolKind::Parameter)};
  std::mt19937 rng(2024);
  TreeGen gen(rng, syms);
  for (int trial = 0; trial < 300; ++trial) {
    Expr e = gen.tree(4);
    Expr back = parse_expression(to_string(e, t), t);
    CHECK(structurally_equal(e, back));
  }
}

TEST_CASE("property: partial derivatives match central finite differences") {
  SymbolTable t;
  std::vector<SymbolId> syms = {t.declare("a", SymbolKind::State),
                                t.declare("b", SymbolKind::State),
                                t.declare("c", SymbolKind::Parameter)};
  std::mt19937 rng(11);
  TreeGen gen(rng, syms);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    Expr e = gen.tree(4);
    SymbolId s = syms[trial % syms.size()];
    Expr d = diff_partial(e, s);
    Binding b(t.size());
    for (SymbolId id : syms) b.set(id, u(rng));
    double sv = b.get(s);
    double h = 1e-6 * std::max(1.0, std::abs(sv));
    double exact, fp, fm;
    try {
      exact = evaluate(d, t, b);
      b.set(s, sv + h);
      fp = evaluate(e, t, b);
      b.set(s, sv - h);
      fm = evaluate(e, t, b);
    } catch (const EvalError&) {
      continue;  // overflow in a nested exponential; skip the sample
    }
    double fd = (fp - fm) / (2 * h);
    CHECK(std::abs(fd - exact) <= 2e-6 * std::max({1.0, std::abs(exact), std::abs(fp)}));
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("property: simplify preserves evaluation") {
  SymbolTable t;
  std::vector<SymbolId> syms = {t.declare("a", SymbolKind::State),
                                t.declare("b", SymbolKind::State),
                                t.declare("c", SymbolKind::Parameter)};
  std::mt19937 rng(13);
  TreeGen gen(rng, syms);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  int checked = 0;
  while (checked < 1000) {
    Expr e = gen.tree(4);
    Expr s = simplify(e);
    Binding b(t.size());
    for (SymbolId id : syms) b.set(id, u(rng));
    double v0, v1;
    try {
      v0 = evaluate(e, t, b);
      v1 = evaluate(s, t, b);
    } catch (const EvalError&) {
      continue;
    }
    CHECK(std::abs(v0 - v1) <= 1e-12 * std::max(1.0, std::abs(v0)));
    ++checked;
  }
}

TEST_CASE("property: partial and total derivatives commute up to the order-shift term") {
  // For a symbol of derivative order k,
  //   d/ds (De) = D(d/ds e) + d/d(s one order lower) e,
  // with no extra term for order-0 symbols.
  SymbolTable t;
  SymbolId x = t.declare("x", SymbolKind::State);
  SymbolId xd = t.derivative_of(x, 1);
  SymbolId xdd = t.derivative_of(x, 2);
  SymbolId xddd = t.derivative_of(x, 3);
  std::vector<SymbolId> syms = {x, xd, xdd};
  std::mt19937 rng(17);
  TreeGen gen(rng, syms);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    Expr e = gen.polynomial(3);
    SymbolId s = syms[trial % syms.size()];
    Expr lhs = diff_partial(diff_total(e, t), s);
    Expr rhs = diff_total(diff_partial(e, s), t);
    if (t[s].order > 0) {
      SymbolId lower = t[s].order == 1 ? x : t.derivative_of(x, t[s].order - 1);
      rhs = rhs + diff_partial(e, lower);
    }
    Binding b(t.size());
    for (SymbolId id : {x, xd, xdd, xddd}) b.set(id, u(rng));
    double l = evaluate(lhs, t, b);
    double r = evaluate(rhs, t, b);
    CHECK(std::abs(l - r) <= 1e-9 * std::max(1.0, std::abs(l)));
  }
}
