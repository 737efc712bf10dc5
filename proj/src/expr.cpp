#include "daeident/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <unordered_map>

namespace daeident {

struct Expr::Node {
  ExprKind kind;
  Func func = Func::Sin;
  double value = 0.0;
  SymbolId sym = kNoSymbol;
  std::shared_ptr<const Node> a, b;
  int nchildren = 0;

  explicit Node(double v) : kind(ExprKind::Constant), value(v) {}
  explicit Node(SymbolId s) : kind(ExprKind::SymbolRef), sym(s) {}
  Node(ExprKind k, const Expr& x) : kind(k), a(x.node_), nchildren(1) {}
  Node(ExprKind k, const Expr& x, const Expr& y)
      : kind(k), a(x.node_), b(y.node_), nchildren(2) {}
  Node(Func f, const Expr& x) : kind(ExprKind::Call), func(f), a(x.node_), nchildren(1) {}
  Node(Func f, const Expr& x, const Expr& y)
      : kind(ExprKind::Call), func(f), a(x.node_), b(y.node_), nchildren(2) {}
};

namespace {

const Expr& zero() {
  static const Expr z = Expr::constant(0.0);
  return z;
}
const Expr& one() {
  static const Expr o = Expr::constant(1.0);
  return o;
}

}  // namespace

Expr Expr::constant(double value) {
  if (!std::isfinite(value)) throw ExprError("constants must be finite");
  return Expr(std::make_shared<const Node>(value));
}

Expr Expr::symbol(SymbolId id) {
  if (id < 0) throw ExprError("invalid symbol id");
  return Expr(std::make_shared<const Node>(id));
}

ExprKind Expr::kind() const { return node_->kind; }
double Expr::value() const { return node_->value; }
SymbolId Expr::symbol_id() const { return node_->sym; }
Func Expr::func() const { return node_->func; }
Expr Expr::child(int i) const { return Expr(i == 0 ? node_->a : node_->b); }
int Expr::child_count() const { return node_->nchildren; }

bool Expr::is_constant(double v) const {
  return node_->kind == ExprKind::Constant && node_->value == v;
}

Expr operator+(const Expr& a, const Expr& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Constant)
    return Expr::constant(a.value() + b.value());
  return Expr(std::make_shared<const Expr::Node>(ExprKind::Add, a, b));
}

Expr operator-(const Expr& a) {
  if (a.kind() == ExprKind::Constant) return Expr::constant(-a.value());
  if (a.kind() == ExprKind::Neg) return a.child(0);
  return Expr(std::make_shared<const Expr::Node>(ExprKind::Neg, a));
}

Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }

Expr operator*(const Expr& a, const Expr& b) {
  if (a.is_zero() || b.is_zero()) return zero();
  if (a.is_one()) return b;
  if (b.is_one()) return a;
  if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Constant)
    return Expr::constant(a.value() * b.value());
  return Expr(std::make_shared<const Expr::Node>(ExprKind::Mul, a, b));
}

Expr operator/(const Expr& a, const Expr& b) {
  if (b.is_zero()) throw ExprError("quotient denominator is the literal zero constant");
  if (a.is_zero()) return zero();
  if (b.is_one()) return a;
  if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Constant) {
    double v = a.value() / b.value();
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return Expr(std::make_shared<const Expr::Node>(ExprKind::Div, a, b));
}

Expr pow(const Expr& base, const Expr& exponent) {
  if (exponent.is_zero()) return one();
  if (exponent.is_one()) return base;
  if (base.is_one()) return one();
  if (base.is_zero() && exponent.kind() == ExprKind::Constant && exponent.value() > 0)
    return zero();
  if (base.kind() == ExprKind::Constant && exponent.kind() == ExprKind::Constant) {
    double v = std::pow(base.value(), exponent.value());
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return Expr(std::make_shared<const Expr::Node>(ExprKind::Pow, base, exponent));
}

namespace {

double apply_numeric(Func f, double x, double y) {
  switch (f) {
    case Func::Sin: return std::sin(x);
    case Func::Cos: return std::cos(x);
    case Func::Tan: return std::tan(x);
    case Func::Atan: return std::atan(x);
    case Func::Atan2: return std::atan2(x, y);
    case Func::Exp: return std::exp(x);
    case Func::Log: return std::log(x);
    case Func::Sqrt: return std::sqrt(x);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

Expr apply(Func f, const Expr& a) {
  if (f == Func::Atan2) throw ExprError("atan2 takes two arguments");
  if (a.kind() == ExprKind::Constant) {
    double v = apply_numeric(f, a.value(), 0.0);
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return Expr(std::make_shared<const Expr::Node>(f, a));
}

Expr apply(Func f, const Expr& a, const Expr& b) {
  if (f != Func::Atan2) throw ExprError(std::string(func_name(f)) + " takes one argument");
  if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Constant) {
    double v = apply_numeric(f, a.value(), b.value());
    if (std::isfinite(v)) return Expr::constant(v);
  }
  return Expr(std::make_shared<const Expr::Node>(f, a, b));
}

const char* func_name(Func f) {
  switch (f) {
    case Func::Sin: return "sin";
    case Func::Cos: return "cos";
    case Func::Tan: return "tan";
    case Func::Atan: return "atan";
    case Func::Atan2: return "atan2";
    case Func::Exp: return "exp";
    case Func::Log: return "log";
    case Func::Sqrt: return "sqrt";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// SymbolTable

SymbolId SymbolTable::declare(const std::string& name, SymbolKind kind) {
  std::unique_lock lock(mutex_);
  if (name.empty()) throw ExprError("symbol names must be nonempty");
  if (by_name_.count(name)) throw ExprError("symbol '" + name + "' is already declared");
  SymbolId id = static_cast<SymbolId>(symbols_.size());
  symbols_.push_back(Symbol{name, kind, kNoSymbol, 0});
  by_name_[name] = id;
  return id;
}

SymbolId SymbolTable::derivative_of(SymbolId id, int extra_order) {
  if (extra_order < 0) throw ExprError("derivative order must be nonnegative");
  if (extra_order == 0) return id;
  std::unique_lock lock(mutex_);
  const Symbol& s = symbols_.at(static_cast<std::size_t>(id));
  SymbolId root = s.kind == SymbolKind::Derivative ? s.base : id;
  int order = s.order + extra_order;
  const Symbol& rs = symbols_.at(static_cast<std::size_t>(root));
  if (rs.kind == SymbolKind::Time)
    throw ExprError("cannot take a derivative symbol of the time variable");
  auto& chain = derivatives_[root];
  while (static_cast<int>(chain.size()) < order) {
    int k = static_cast<int>(chain.size()) + 1;
    std::string name = rs.name + std::string(static_cast<std::size_t>(k), '\'');
    SymbolId did = static_cast<SymbolId>(symbols_.size());
    symbols_.push_back(Symbol{name, SymbolKind::Derivative, root, k});
    by_name_[name] = did;
    chain.push_back(did);
  }
  return chain[static_cast<std::size_t>(order - 1)];
}

std::optional<SymbolId> SymbolTable::lookup(const std::string& name) const {
  std::shared_lock lock(mutex_);
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

const Symbol& SymbolTable::operator[](SymbolId id) const {
  std::shared_lock lock(mutex_);
  return symbols_.at(static_cast<std::size_t>(id));
}

std::size_t SymbolTable::size() const {
  std::shared_lock lock(mutex_);
  return symbols_.size();
}

// ---------------------------------------------------------------------------
// Binding

void Binding::resize(std::size_t size) {
  values_.resize(size, 0.0);
  bound_.resize(size, 0);
}

void Binding::set(SymbolId id, double v) {
  auto i = static_cast<std::size_t>(id);
  if (i >= values_.size()) resize(i + 1);
  values_[i] = v;
  bound_[i] = 1;
}

bool Binding::has(SymbolId id) const {
  auto i = static_cast<std::size_t>(id);
  return i < bound_.size() && bound_[i];
}

double Binding::get(SymbolId id) const {
  if (!has(id)) throw EvalError("symbol id " + std::to_string(id) + " is unbound");
  return values_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Parser

namespace {

class Parser {
 public:
  Parser(const std::string& text, SymbolTable& table) : text_(text), table_(table) {}

  Expr run() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  const std::string& text_;
  SymbolTable& table_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (eat('+')) {
        e = e + parse_term();
      } else if (eat('-')) {
        e = e - parse_term();
      } else {
        return e;
      }
    }
  }

  Expr parse_term() {
    Expr e = parse_unary();
    for (;;) {
      if (eat('*')) {
        e = e * parse_unary();
      } else if (eat('/')) {
        e = e / parse_unary();
      } else {
        return e;
      }
    }
  }

  Expr parse_unary() {
    if (eat('-')) return -parse_unary();
    if (eat('+')) return parse_unary();
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (eat('^')) return pow(base, parse_unary());
    return base;
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of expression", pos_);
    char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      if (!eat(')')) throw ParseError("expected ')'", pos_);
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_name();
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  Expr parse_number() {
    const char* begin = text_.data() + pos_;
    const char* end = text_.data() + text_.size();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr == begin) throw ParseError("invalid numeric literal", pos_);
    pos_ = static_cast<std::size_t>(ptr - text_.data());
    return Expr::constant(v);
  }

  Expr parse_name() {
    std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    std::string name = text_.substr(start, pos_ - start);
    if (peek() == '(') {
      ++pos_;  // consume '('
      std::vector<Expr> args;
      args.push_back(parse_expr());
      while (eat(',')) args.push_back(parse_expr());
      if (!eat(')')) throw ParseError("expected ')'", pos_);
      std::optional<Func> f = function_by_name(name);
      if (!f) throw ParseError("unsupported function '" + name + "'", start);
      if (*f == Func::Atan2) {
        if (args.size() != 2) throw ParseError("atan2 takes two arguments", start);
        return apply(*f, args[0], args[1]);
      }
      if (args.size() != 1) throw ParseError(name + " takes one argument", start);
      return apply(*f, args[0]);
    }
    int primes = 0;
    while (pos_ < text_.size() && text_[pos_] == '\'') {
      ++primes;
      ++pos_;
    }
    auto id = table_.lookup(name);
    if (!id) throw ParseError("unknown symbol '" + name + "'", start);
    if (primes > 0) return Expr::symbol(table_.derivative_of(*id, primes));
    return Expr::symbol(*id);
  }

  static std::optional<Func> function_by_name(const std::string& n) {
    if (n == "sin") return Func::Sin;
    if (n == "cos") return Func::Cos;
    if (n == "tan") return Func::Tan;
    if (n == "atan") return Func::Atan;
    if (n == "atan2") return Func::Atan2;
    if (n == "exp") return Func::Exp;
    if (n == "log") return Func::Log;
    if (n == "sqrt") return Func::Sqrt;
    return std::nullopt;
  }
};

}  // namespace

Expr parse_expression(const std::string& text, SymbolTable& table) {
  return Parser(text, table).run();
}

// ---------------------------------------------------------------------------
// Differentiation

namespace {

using Memo = std::unordered_map<const Expr::Node*, Expr>;

Expr diff_partial_impl(const Expr& e, SymbolId s, Memo& memo) {
  auto it = memo.find(e.node());
  if (it != memo.end()) return it->second;
  Expr result = zero();
  switch (e.kind()) {
    case ExprKind::Constant:
      result = zero();
      break;
    case ExprKind::SymbolRef:
      result = e.symbol_id() == s ? one() : zero();
      break;
    case ExprKind::Add:
      result = diff_partial_impl(e.child(0), s, memo) + diff_partial_impl(e.child(1), s, memo);
      break;
    case ExprKind::Neg:
      result = -diff_partial_impl(e.child(0), s, memo);
      break;
    case ExprKind::Mul: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      result = diff_partial_impl(a, s, memo) * b + a * diff_partial_impl(b, s, memo);
      break;
    }
    case ExprKind::Div: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      Expr da = diff_partial_impl(a, s, memo);
      if (b.kind() == ExprKind::Pow && b.child(1).kind() == ExprKind::Constant) {
        // d(a / c^n) = (a' c - n a c') / c^(n+1): keeps the denominator
        // exponent linear in the differentiation order
        Expr c = b.child(0);
        double n = b.child(1).value();
        Expr dc = diff_partial_impl(c, s, memo);
        if (dc.is_zero()) {
          result = da / b;
        } else {
          result = (da * c - Expr::constant(n) * a * dc) / pow(c, Expr::constant(n + 1.0));
        }
      } else {
        Expr db = diff_partial_impl(b, s, memo);
        if (db.is_zero()) {
          result = da / b;
        } else {
          result = (da * b - a * db) / pow(b, Expr::constant(2.0));
        }
      }
      break;
    }
    case ExprKind::Pow: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      Expr da = diff_partial_impl(a, s, memo);
      Expr db = diff_partial_impl(b, s, memo);
      if (b.kind() == ExprKind::Constant) {
        double c = b.value();
        result = Expr::constant(c) * pow(a, Expr::constant(c - 1.0)) * da;
      } else {
        result = e * (db * apply(Func::Log, a) + b * da / a);
      }
      break;
    }
    case ExprKind::Call: {
      Expr a = e.child(0);
      Expr da = diff_partial_impl(a, s, memo);
      switch (e.func()) {
        case Func::Sin: result = apply(Func::Cos, a) * da; break;
        case Func::Cos: result = -(apply(Func::Sin, a) * da); break;
        case Func::Tan: result = da / pow(apply(Func::Cos, a), Expr::constant(2.0)); break;
        case Func::Atan:
          result = da / (one() + pow(a, Expr::constant(2.0)));
          break;
        case Func::Exp: result = e * da; break;
        case Func::Log: result = da / a; break;
        case Func::Sqrt: result = da / (Expr::constant(2.0) * e); break;
        case Func::Atan2: {
          Expr y = a;
          Expr x = e.child(1);
          Expr dy = da;
          Expr dx = diff_partial_impl(x, s, memo);
          result = (dy * x - y * dx) /
                   (pow(x, Expr::constant(2.0)) + pow(y, Expr::constant(2.0)));
          break;
        }
      }
      break;
    }
  }
  memo.emplace(e.node(), result);
  return result;
}

Expr diff_total_impl(const Expr& e, SymbolTable& table, Memo& memo) {
  auto it = memo.find(e.node());
  if (it != memo.end()) return it->second;
  Expr result = zero();
  switch (e.kind()) {
    case ExprKind::Constant:
      result = zero();
      break;
    case ExprKind::SymbolRef: {
      const Symbol& s = table[e.symbol_id()];
      if (s.kind == SymbolKind::Time) {
        result = one();
      } else {
        result = Expr::symbol(table.derivative_of(e.symbol_id(), 1));
      }
      break;
    }
    case ExprKind::Add:
      result = diff_total_impl(e.child(0), table, memo) + diff_total_impl(e.child(1), table, memo);
      break;
    case ExprKind::Neg:
      result = -diff_total_impl(e.child(0), table, memo);
      break;
    case ExprKind::Mul: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      result = diff_total_impl(a, table, memo) * b + a * diff_total_impl(b, table, memo);
      break;
    }
    case ExprKind::Div: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      Expr da = diff_total_impl(a, table, memo);
      if (b.kind() == ExprKind::Pow && b.child(1).kind() == ExprKind::Constant) {
        Expr c = b.child(0);
        double n = b.child(1).value();
        Expr dc = diff_total_impl(c, table, memo);
        if (dc.is_zero()) {
          result = da / b;
        } else {
          result = (da * c - Expr::constant(n) * a * dc) / pow(c, Expr::constant(n + 1.0));
        }
      } else {
        Expr db = diff_total_impl(b, table, memo);
        if (db.is_zero()) {
          result = da / b;
        } else {
          result = (da * b - a * db) / pow(b, Expr::constant(2.0));
        }
      }
      break;
    }
    case ExprKind::Pow: {
      Expr a = e.child(0);
      Expr b = e.child(1);
      Expr da = diff_total_impl(a, table, memo);
      Expr db = diff_total_impl(b, table, memo);
      if (b.kind() == ExprKind::Constant) {
        double c = b.value();
        result = Expr::constant(c) * pow(a, Expr::constant(c - 1.0)) * da;
      } else {
        result = e * (db * apply(Func::Log, a) + b * da / a);
      }
      break;
    }
    case ExprKind::Call: {
      Expr a = e.child(0);
      Expr da = diff_total_impl(a, table, memo);
      switch (e.func()) {
        case Func::Sin: result = apply(Func::Cos, a) * da; break;
        case Func::Cos: result = -(apply(Func::Sin, a) * da); break;
        case Func::Tan: result = da / pow(apply(Func::Cos, a), Expr::constant(2.0)); break;
        case Func::Atan:
          result = da / (one() + pow(a, Expr::constant(2.0)));
          break;
        case Func::Exp: result = e * da; break;
        case Func::Log: result = da / a; break;
        case Func::Sqrt: result = da / (Expr::constant(2.0) * e); break;
        case Func::Atan2: {
          Expr y = a;
          Expr x = e.child(1);
          Expr dy = da;
          Expr dx = diff_total_impl(x, table, memo);
          result = (dy * x - y * dx) /
                   (pow(x, Expr::constant(2.0)) + pow(y, Expr::constant(2.0)));
          break;
        }
      }
      break;
    }
  }
  memo.emplace(e.node(), result);
  return result;
}

}  // namespace

Expr diff_partial(const Expr& e, SymbolId s) {
  Memo memo;
  return diff_partial_impl(e, s, memo);
}

Expr diff_total(const Expr& e, SymbolTable& table) {
  Memo memo;
  return diff_total_impl(e, table, memo);
}

// ---------------------------------------------------------------------------
// simplify / substitute / traversal

namespace {

Expr rebuild(const Expr& e, const std::function<std::optional<Expr>(SymbolId)>& fn, Memo& memo) {
  auto it = memo.find(e.node());
  if (it != memo.end()) return it->second;
  Expr result = e;
  switch (e.kind()) {
    case ExprKind::Constant:
      break;
    case ExprKind::SymbolRef: {
      if (fn) {
        auto r = fn(e.symbol_id());
        if (r) result = *r;
      }
      break;
    }
    case ExprKind::Add:
      result = rebuild(e.child(0), fn, memo) + rebuild(e.child(1), fn, memo);
      break;
    case ExprKind::Neg:
      result = -rebuild(e.child(0), fn, memo);
      break;
    case ExprKind::Mul:
      result = rebuild(e.child(0), fn, memo) * rebuild(e.child(1), fn, memo);
      break;
    case ExprKind::Div:
      result = rebuild(e.child(0), fn, memo) / rebuild(e.child(1), fn, memo);
      break;
    case ExprKind::Pow:
      result = pow(rebuild(e.child(0), fn, memo), rebuild(e.child(1), fn, memo));
      break;
    case ExprKind::Call:
      if (e.child_count() == 2) {
        result = apply(e.func(), rebuild(e.child(0), fn, memo), rebuild(e.child(1), fn, memo));
      } else {
        result = apply(e.func(), rebuild(e.child(0), fn, memo));
      }
      break;
  }
  memo.emplace(e.node(), result);
  return result;
}

}  // namespace

Expr simplify(const Expr& e) {
  Memo memo;
  return rebuild(e, nullptr, memo);
}

Expr transform_symbols(const Expr& e, const std::function<std::optional<Expr>(SymbolId)>& fn) {
  Memo memo;
  return rebuild(e, fn, memo);
}

Expr substitute(const Expr& e, const std::map<SymbolId, Expr>& replacements) {
  return transform_symbols(e, [&](SymbolId id) -> std::optional<Expr> {
    auto it = replacements.find(id);
    if (it == replacements.end()) return std::nullopt;
    return it->second;
  });
}

Expr pin_parameter_derivatives(const Expr& e, const SymbolTable& table) {
  return transform_symbols(e, [&](SymbolId id) -> std::optional<Expr> {
    const Symbol& s = table[id];
    if (s.kind != SymbolKind::Derivative) return std::nullopt;
    if (table[s.base].kind != SymbolKind::Parameter) return std::nullopt;
    return Expr::constant(0.0);
  });
}

void collect_symbols(const Expr& e, std::set<SymbolId>& out) {
  switch (e.kind()) {
    case ExprKind::Constant:
      return;
    case ExprKind::SymbolRef:
      out.insert(e.symbol_id());
      return;
    default:
      for (int i = 0; i < e.child_count(); ++i) collect_symbols(e.child(i), out);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double evaluate_impl(const Expr& e, const SymbolTable& table, const Binding& b,
                     std::unordered_map<const Expr::Node*, double>& memo) {
  auto it = memo.find(e.node());
  if (it != memo.end()) return it->second;
  double v = 0.0;
  switch (e.kind()) {
    case ExprKind::Constant:
      v = e.value();
      break;
    case ExprKind::SymbolRef: {
      if (!b.has(e.symbol_id()))
        throw EvalError("unbound symbol '" + table[e.symbol_id()].name + "'");
      v = b.get(e.symbol_id());
      break;
    }
    case ExprKind::Add:
      v = evaluate_impl(e.child(0), table, b, memo) + evaluate_impl(e.child(1), table, b, memo);
      break;
    case ExprKind::Neg:
      v = -evaluate_impl(e.child(0), table, b, memo);
      break;
    case ExprKind::Mul:
      v = evaluate_impl(e.child(0), table, b, memo) * evaluate_impl(e.child(1), table, b, memo);
      break;
    case ExprKind::Div:
      v = evaluate_impl(e.child(0), table, b, memo) / evaluate_impl(e.child(1), table, b, memo);
      break;
    case ExprKind::Pow:
      v = std::pow(evaluate_impl(e.child(0), table, b, memo),
                   evaluate_impl(e.child(1), table, b, memo));
      break;
    case ExprKind::Call:
      if (e.child_count() == 2) {
        v = apply_numeric(e.func(), evaluate_impl(e.child(0), table, b, memo),
                          evaluate_impl(e.child(1), table, b, memo));
      } else {
        v = apply_numeric(e.func(), evaluate_impl(e.child(0), table, b, memo), 0.0);
      }
      break;
  }
  if (!std::isfinite(v))
    throw EvalError("non-finite value in subexpression: " + to_string(e, table));
  memo.emplace(e.node(), v);
  return v;
}

}  // namespace

double evaluate(const Expr& e, const SymbolTable& table, const Binding& b) {
  std::unordered_map<const Expr::Node*, double> memo;
  return evaluate_impl(e, table, b, memo);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// Precedence levels: Add 1, Neg 2, Mul/Div 3, Pow 4, atoms 5.
int precedence(const Expr& e) {
  switch (e.kind()) {
    case ExprKind::Add: return 1;
    case ExprKind::Neg: return 2;
    case ExprKind::Mul:
    case ExprKind::Div: return 3;
    case ExprKind::Pow: return 4;
    default: return 5;
  }
}

void print(const Expr& e, const SymbolTable& table, int ctx, std::string& out) {
  int prec = precedence(e);
  bool wrap = prec < ctx;
  if (wrap) out += '(';
  switch (e.kind()) {
    case ExprKind::Constant:
      out += format_double(e.value());
      break;
    case ExprKind::SymbolRef:
      out += table[e.symbol_id()].name;
      break;
    case ExprKind::Add: {
      print(e.child(0), table, 1, out);
      Expr rhs = e.child(1);
      if (rhs.kind() == ExprKind::Neg) {
        out += " - ";
        print(rhs.child(0), table, 2, out);
      } else if (rhs.kind() == ExprKind::Constant && rhs.value() < 0) {
        out += " - ";
        out += format_double(-rhs.value());
      } else {
        out += " + ";
        print(rhs, table, 2, out);
      }
      break;
    }
    case ExprKind::Neg:
      out += '-';
      print(e.child(0), table, 4, out);
      break;
    case ExprKind::Mul:
      print(e.child(0), table, 3, out);
      out += '*';
      print(e.child(1), table, 4, out);
      break;
    case ExprKind::Div:
      print(e.child(0), table, 3, out);
      out += '/';
      print(e.child(1), table, 4, out);
      break;
    case ExprKind::Pow:
      print(e.child(0), table, 5, out);
      out += '^';
      print(e.child(1), table, 5, out);
      break;
    case ExprKind::Call:
      out += func_name(e.func());
      out += '(';
      print(e.child(0), table, 0, out);
      if (e.child_count() == 2) {
        out += ", ";
        print(e.child(1), table, 0, out);
      }
      out += ')';
      break;
  }
  if (wrap) out += ')';
}

}  // namespace

std::string to_string(const Expr& e, const SymbolTable& table) {
  std::string out;
  print(e, table, 0, out);
  return out;
}

bool structurally_equal(const Expr& a, const Expr& b) {
  if (a.node() == b.node()) return true;
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case ExprKind::Constant:
      return a.value() == b.value();
    case ExprKind::SymbolRef:
      return a.symbol_id() == b.symbol_id();
    case ExprKind::Call:
      if (a.func() != b.func()) return false;
      break;
    default:
      break;
  }
  if (a.child_count() != b.child_count()) return false;
  for (int i = 0; i < a.child_count(); ++i) {
    if (!structurally_equal(a.child(i), b.child(i))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// CompiledExprs

CompiledExprs::CompiledExprs(std::span<const Expr> exprs) {
  std::unordered_map<const Expr::Node*, std::int32_t> slot;
  // Iterative post-order flattening to keep deep trees off the C++ stack.
  struct Frame {
    Expr e;
    int next_child;
  };
  auto flatten = [&](const Expr& root) -> std::int32_t {
    std::vector<Frame> stack{{root, 0}};
    std::int32_t result = -1;
    while (!stack.empty()) {
      Frame& f = stack.back();
      auto it = slot.find(f.e.node());
      if (it != slot.end()) {
        result = it->second;
        stack.pop_back();
        continue;
      }
      if (f.next_child < f.e.child_count()) {
        Expr child = f.e.child(f.next_child);
        ++f.next_child;
        stack.push_back({std::move(child), 0});
        continue;
      }
      Instr ins;
      ins.kind = f.e.kind();
      switch (f.e.kind()) {
        case ExprKind::Constant:
          ins.value = f.e.value();
          break;
        case ExprKind::SymbolRef:
          ins.sym = f.e.symbol_id();
          max_symbol_ = std::max(max_symbol_, ins.sym);
          break;
        case ExprKind::Call:
          ins.func = f.e.func();
          [[fallthrough]];
        default:
          ins.a = slot.at(f.e.child(0).node());
          if (f.e.child_count() == 2) ins.b = slot.at(f.e.child(1).node());
          break;
      }
      std::int32_t idx = static_cast<std::int32_t>(tape_.size());
      tape_.push_back(ins);
      slot.emplace(f.e.node(), idx);
      result = idx;
      stack.pop_back();
    }
    return result;
  };
  outputs_.reserve(exprs.size());
  for (const Expr& e : exprs) outputs_.push_back(flatten(e));
}

void CompiledExprs::eval(std::span<const double> symbol_values,
                         std::span<const std::uint8_t> bound, std::span<double> out,
                         std::vector<double>& scratch) const {
  scratch.resize(tape_.size());
  double* v = scratch.data();
  for (std::size_t i = 0; i < tape_.size(); ++i) {
    const Instr& ins = tape_[i];
    switch (ins.kind) {
      case ExprKind::Constant:
        v[i] = ins.value;
        break;
      case ExprKind::SymbolRef: {
        auto s = static_cast<std::size_t>(ins.sym);
        if (s >= bound.size() || !bound[s])
          throw EvalError("unbound symbol id " + std::to_string(ins.sym) +
                          " in compiled evaluation");
        v[i] = symbol_values[s];
        break;
      }
      case ExprKind::Add: v[i] = v[ins.a] + v[ins.b]; break;
      case ExprKind::Neg: v[i] = -v[ins.a]; break;
      case ExprKind::Mul: v[i] = v[ins.a] * v[ins.b]; break;
      case ExprKind::Div: v[i] = v[ins.a] / v[ins.b]; break;
      case ExprKind::Pow: v[i] = std::pow(v[ins.a], v[ins.b]); break;
      case ExprKind::Call:
        v[i] = apply_numeric(ins.func, v[ins.a], ins.b >= 0 ? v[ins.b] : 0.0);
        break;
    }
  }
  for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = v[outputs_[k]];
}

}  // namespace daeident
