#pragma once

// Minimal symbolic expression engine: immutable expression trees over the
// symbols of a differential-algebraic model, with exact partial and total
// (in time) differentiation, light local simplification, and numeric
// evaluation.  Trees share subexpressions freely; all mutation happens at
// construction time.
//
// Expression grammar (infix):
//
//   expr     = term { ("+" | "-") term } ;
//   term     = unary { ("*" | "/") unary } ;
//   unary    = ("+" | "-") unary | power ;
//   power    = primary [ "^" unary ] ;              (right associative)
//   primary  = number | name "(" expr {"," expr} ")" | name {"'"} | "(" expr ")" ;
//   number   = decimal or scientific literal, e.g. 2, 0.5, 8.7503e3 ;
//
// Supported functions: sin, cos, tan, atan, atan2, exp, log, sqrt.
// A trailing run of apostrophes on a name denotes a time-derivative symbol
// of that order (x1'' is the second derivative of x1).

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace daeident {

using SymbolId = std::int32_t;
inline constexpr SymbolId kNoSymbol = -1;

enum class SymbolKind : std::uint8_t {
  State,           // differential state
  AlgebraicState,  // algebraic state
  Parameter,
  Derivative,      // minted time derivative of a base symbol
  Time,
};

struct Symbol {
  std::string name;
  SymbolKind kind = SymbolKind::State;
  SymbolId base = kNoSymbol;  // root (order-0) symbol for derivatives
  int order = 0;              // 0 for base symbols
};

class ExprError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public ExprError {
 public:
  ParseError(const std::string& message, std::size_t position)
      : ExprError(message + " (at position " + std::to_string(position) + ")"),
        position(position) {}
  std::size_t position;
};

class EvalError : public ExprError {
 public:
  using ExprError::ExprError;
};

// Owns the symbols of one model.  Derivative symbols are minted lazily and
// always reference their order-0 root.  Minting is serialized internally;
// lookups may run concurrently with it (symbol storage is reference-stable).
class SymbolTable {
 public:
  SymbolId declare(const std::string& name, SymbolKind kind);
  // Derivative of `id` of the given additional order (mints if needed).
  SymbolId derivative_of(SymbolId id, int extra_order = 1);
  std::optional<SymbolId> lookup(const std::string& name) const;
  const Symbol& operator[](SymbolId id) const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::deque<Symbol> symbols_;  // deque: references stay valid while minting
  std::map<std::string, SymbolId> by_name_;
  std::map<SymbolId, std::vector<SymbolId>> derivatives_;  // root -> [order1, order2, ...]
};

enum class ExprKind : std::uint8_t { Constant, SymbolRef, Add, Mul, Div, Pow, Neg, Call };

enum class Func : std::uint8_t { Sin, Cos, Tan, Atan, Atan2, Exp, Log, Sqrt };

const char* func_name(Func f);

// Immutable expression handle.  Copying is cheap (shared nodes).
class Expr {
 public:
  Expr() : Expr(constant(0.0)) {}

  static Expr constant(double value);
  static Expr symbol(SymbolId id);

  ExprKind kind() const;
  double value() const;        // Constant only
  SymbolId symbol_id() const;  // SymbolRef only
  Func func() const;           // Call only
  Expr child(int i) const;     // 0 for unary, 0/1 for binary
  int child_count() const;

  bool is_constant(double v) const;
  bool is_zero() const { return is_constant(0.0); }
  bool is_one() const { return is_constant(1.0); }

  struct Node;
  const Node* node() const { return node_.get(); }

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;

  friend Expr operator+(const Expr&, const Expr&);
  friend Expr operator-(const Expr&, const Expr&);
  friend Expr operator*(const Expr&, const Expr&);
  friend Expr operator/(const Expr&, const Expr&);
  friend Expr operator-(const Expr&);
  friend Expr pow(const Expr&, const Expr&);
  friend Expr apply(Func, const Expr&);
  friend Expr apply(Func, const Expr&, const Expr&);
};

// Smart constructors; each applies the sound local rules (0+a, 0*a, 1*a,
// constant folding) so trees stay small while stacking derivatives.
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr pow(const Expr& base, const Expr& exponent);
Expr apply(Func f, const Expr& a);
Expr apply(Func f, const Expr& a, const Expr& b);

// Numeric assignment for evaluation, indexed by SymbolId.
class Binding {
 public:
  Binding() = default;
  explicit Binding(std::size_t size) : values_(size, 0.0), bound_(size, 0) {}
  void resize(std::size_t size);
  void set(SymbolId id, double v);
  bool has(SymbolId id) const;
  double get(SymbolId id) const;
  std::span<const double> values() const { return values_; }
  std::span<const std::uint8_t> mask() const { return bound_; }

 private:
  std::vector<double> values_;
  std::vector<std::uint8_t> bound_;
};

Expr parse_expression(const std::string& text, SymbolTable& table);

// Exact symbolic partial derivative; symbols other than `s` are independent.
Expr diff_partial(const Expr& e, SymbolId s);

// Total derivative in time: d(x^(k))/dt = x^(k+1) (minted via `table`),
// d(constant)/dt = 0, d(t)/dt = 1.  No model dynamics are substituted.
Expr diff_total(const Expr& e, SymbolTable& table);

// Rebuild through the smart constructors (0*a, 0+a, 1*a, constant folding).
Expr simplify(const Expr& e);

double evaluate(const Expr& e, const SymbolTable& table, const Binding& b);

std::string to_string(const Expr& e, const SymbolTable& table);

bool structurally_equal(const Expr& a, const Expr& b);

void collect_symbols(const Expr& e, std::set<SymbolId>& out);

// Rebuild with symbols rewritten wherever `fn` returns a replacement.
Expr transform_symbols(const Expr& e, const std::function<std::optional<Expr>(SymbolId)>& fn);

Expr substitute(const Expr& e, const std::map<SymbolId, Expr>& replacements);

// Replaces every derivative symbol whose root is a parameter by the zero
// constant (parameters are constant in time once a model is stacked).
Expr pin_parameter_derivatives(const Expr& e, const SymbolTable& table);

// A set of expressions flattened to a shared evaluation tape.  Common
// subtrees (by node identity) are evaluated once.  eval() is const and
// thread-safe; callers pass their own scratch buffer.
class CompiledExprs {
 public:
  CompiledExprs() = default;
  explicit CompiledExprs(std::span<const Expr> exprs);

  std::size_t output_count() const { return outputs_.size(); }
  std::size_t tape_size() const { return tape_.size(); }
  SymbolId max_symbol_id() const { return max_symbol_; }

  void eval(std::span<const double> symbol_values, std::span<const std::uint8_t> bound,
            std::span<double> out, std::vector<double>& scratch) const;

 private:
  struct Instr {
    ExprKind kind;
    Func func;
    std::int32_t a = -1, b = -1;  // operand slots
    double value = 0.0;           // Constant
    SymbolId sym = kNoSymbol;     // SymbolRef
  };
  std::vector<Instr> tape_;
  std::vector<std::int32_t> outputs_;
  SymbolId max_symbol_ = kNoSymbol;
};

}  // namespace daeident
