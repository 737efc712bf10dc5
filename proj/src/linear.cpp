#include "daeident/linear.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace daeident {

namespace {

constexpr double kConditionGuard = 1e12;

std::pair<int, int> require_partition(const LinearDae& d) {
  if (!d.partition) throw LinearError("this operation requires the (n1, n2) partition");
  return *d.partition;
}

bool invertible_guarded(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) return false;
  if (M.rows() == 0) return true;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  double smax = svd.singularValues()[0];
  double smin = svd.singularValues()[svd.singularValues().size() - 1];
  return smin > 0 && smax / smin < kConditionGuard;
}

}  // namespace

Eigen::MatrixXd LinearDae::A11() const {
  auto [n1, n2] = *partition;
  return A.topLeftCorner(n1, n1);
}
Eigen::MatrixXd LinearDae::A12() const {
  auto [n1, n2] = *partition;
  return A.topRightCorner(n1, n2);
}
Eigen::MatrixXd LinearDae::A21() const {
  auto [n1, n2] = *partition;
  return A.bottomLeftCorner(n2, n1);
}
Eigen::MatrixXd LinearDae::A22() const {
  auto [n1, n2] = *partition;
  return A.bottomRightCorner(n2, n2);
}

void validate_linear(const LinearDae& d) {
  const int n = d.n();
  if (d.E.rows() != n || d.E.cols() != n || d.A.cols() != n)
    throw LinearError("E and A must be square matrices of the same order");
  if (d.C.cols() != n) throw LinearError("C must have n columns");
  if (d.partition) {
    auto [n1, n2] = *d.partition;
    if (n1 < 0 || n2 < 0 || n1 + n2 != n) throw LinearError("partition sizes must sum to n");
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(n, n);
    expected.topLeftCorner(n1, n1).setIdentity();
    if (d.E != expected)
      throw LinearError("partitioned systems require E = diag(I, 0) exactly");
  }
  for (auto [i, j] : d.theta) {
    if (i < 0 || j < 0 || i >= n || j >= n) throw LinearError("theta entry out of range");
  }
}

std::vector<std::pair<int, int>> theta_block(const LinearDae& d,
                                             const std::vector<std::string>& blocks) {
  const int n = d.n();
  std::vector<std::pair<int, int>> out;
  auto push_range = [&](int r0, int r1, int c0, int c1) {
    for (int j = c0; j < c1; ++j)
      for (int i = r0; i < r1; ++i) out.emplace_back(i, j);
  };
  for (const std::string& b : blocks) {
    if (b == "A") {
      push_range(0, n, 0, n);
      continue;
    }
    auto [n1, n2] = require_partition(d);
    if (b == "A11") push_range(0, n1, 0, n1);
    else if (b == "A12") push_range(0, n1, n1, n);
    else if (b == "A21") push_range(n1, n, 0, n1);
    else if (b == "A22") push_range(n1, n, n1, n);
    else throw LinearError("unknown block name '" + b + "'");
  }
  return out;
}

std::vector<std::pair<int, int>> theta_from_mask(
    const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < mask.cols(); ++j)
    for (int i = 0; i < mask.rows(); ++i)
      if (mask(i, j)) out.emplace_back(i, j);
  return out;
}

std::vector<std::pair<int, int>> theta_nonzero(const LinearDae& d) {
  std::vector<std::pair<int, int>> out;
  for (int j = 0; j < d.n(); ++j)
    for (int i = 0; i < d.n(); ++i)
      if (d.A(i, j) != 0.0) out.emplace_back(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Observability

Eigen::MatrixXd descriptor_observability_matrix(const LinearDae& d, int levels) {
  if (levels < 1) throw LinearError("block observability matrix needs at least one level");
  const int n = d.n();
  const int q = d.q();
  Eigen::MatrixXd O = Eigen::MatrixXd::Zero(levels * (n + q), (levels + 1) * n);
  for (int k = 0; k < levels; ++k) {
    O.block(k * n, k * n, n, n) = d.A;
    O.block(k * n, (k + 1) * n, n, n) = -d.E;
  }
  for (int k = 0; k < levels; ++k) {
    O.block(levels * n + k * q, k * n, q, n) = d.C;
  }
  return O;
}

bool block_r_observable(const LinearDae& d) {
  validate_linear(d);
  const int n = d.n();
  Eigen::MatrixXd O = descriptor_observability_matrix(d, n);
  double tol = default_tolerance(O, n, n);
  return is_one_full(O, n, tol).one_full;
}

bool pbh_r_observable(const LinearDae& d) {
  validate_linear(d);
  const int n = d.n();
  const int q = d.q();
  double scale = std::max({d.A.norm(), d.E.norm(), 1.0});

  auto stacked_rank_at = [&](std::complex<double> lambda) {
    Eigen::MatrixXcd M(n + q, n);
    M.topRows(n) = lambda * d.E.cast<std::complex<double>>() - d.A.cast<std::complex<double>>();
    M.bottomRows(q) = d.C.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(M);
    double norm2 = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
    double tol = default_tolerance_from_norm(norm2, 1, n);
    int r = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()[i] > tol) ++r;
    return r;
  };

  // Regularity probe: a regular pencil has nonsingular lambda E - A at all
  // but finitely many lambda, so several pseudorandom probes suffice.
  std::mt19937 rng(0x51ab1e);
  std::normal_distribution<double> dist(0.0, 1.0);
  auto random_lambda = [&]() {
    return std::complex<double>(dist(rng), dist(rng)) * scale;
  };
  bool regular = false;
  std::complex<double> probe;
  for (int k = 0; k < 4; ++k) {
    probe = random_lambda();
    Eigen::MatrixXcd P =
        probe * d.E.cast<std::complex<double>>() - d.A.cast<std::complex<double>>();
    double tol = default_tolerance_from_norm(P.norm(), 1, n);
    if (numerical_rank(P, tol) == n) {
      regular = true;
      break;
    }
  }
  if (!regular)
    throw SingularPencilError(
        "the pencil lambda*E - A is singular as a polynomial; the eigenvalue test is "
        "indeterminate");

  // Rank can only drop at finite generalized eigenvalues of the pencil.
  Eigen::GeneralizedEigenSolver<Eigen::MatrixXd> ges;
  ges.compute(d.A, d.E, false);
  for (Eigen::Index i = 0; i < ges.alphas().size(); ++i) {
    std::complex<double> alpha = ges.alphas()[i];
    double beta = ges.betas()[i];
    if (std::abs(beta) <= 1e-12 * std::max(std::abs(alpha), scale)) continue;  // infinite
    std::complex<double> lambda = alpha / beta;
    if (stacked_rank_at(lambda) < n) return false;
  }
  return stacked_rank_at(probe) == n;
}

bool kalman_observable(const LinearDae& d) {
  validate_linear(d);
  if (!invertible_guarded(d.E)) throw LinearError("Kalman test requires nonsingular E");
  const int n = d.n();
  const int q = d.q();
  Eigen::MatrixXd Ap = d.E.partialPivLu().solve(d.A);
  Eigen::MatrixXd O(n * q, n);
  Eigen::MatrixXd row = d.C;
  for (int k = 0; k < n; ++k) {
    O.middleRows(k * q, q) = row;
    row = row * Ap;
  }
  double tol = default_tolerance(O, n, n);
  return numerical_rank(O, tol) == n;
}

// ---------------------------------------------------------------------------
// Reduction and consistent derivatives

Eigen::MatrixXd reduced_matrix(const LinearDae& d) {
  auto [n1, n2] = require_partition(d);
  if (n2 == 0) return d.A;
  Eigen::MatrixXd A22 = d.A22();
  if (!invertible_guarded(A22)) throw LinearError("A22 is singular; the system is not index 1");
  return d.A11() - d.A12() * A22.partialPivLu().solve(d.A21());
}

Eigen::VectorXd linear_consistent_state(const LinearDae& d, const Eigen::VectorXd& x1) {
  if (!d.partition || d.partition->second == 0) {
    if (x1.size() != d.n()) throw LinearError("state size mismatch");
    return x1;
  }
  auto [n1, n2] = *d.partition;
  if (x1.size() != n1) throw LinearError("x1 size mismatch");
  Eigen::MatrixXd A22 = d.A22();
  if (!invertible_guarded(A22)) throw LinearError("A22 is singular; the system is not index 1");
  Eigen::VectorXd x(d.n());
  x.head(n1) = x1;
  x.tail(n2) = -A22.partialPivLu().solve(d.A21() * x1);
  return x;
}

std::vector<Eigen::VectorXd> linear_consistent_derivatives(const LinearDae& d,
                                                           const Eigen::VectorXd& x1, int sigma) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(sigma) + 1);
  if (d.partition && d.partition->second > 0) {
    auto [n1, n2] = *d.partition;
    if (x1.size() != n1) throw LinearError("x1 size mismatch");
    Eigen::MatrixXd Ac = reduced_matrix(d);
    Eigen::MatrixXd A22 = d.A22();
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A22);
    Eigen::VectorXd x1k = x1;
    for (int k = 0; k <= sigma; ++k) {
      Eigen::VectorXd x(d.n());
      x.head(n1) = x1k;
      x.tail(n2) = -lu.solve(d.A21() * x1k);
      out.push_back(std::move(x));
      x1k = (Ac * x1k).eval();
    }
    return out;
  }
  if (x1.size() != d.n()) throw LinearError("state size mismatch");
  if (!invertible_guarded(d.E))
    throw LinearError("derivatives of an unpartitioned system require nonsingular E");
  Eigen::MatrixXd Ap = d.E.partialPivLu().solve(d.A);
  Eigen::VectorXd xk = x1;
  for (int k = 0; k <= sigma; ++k) {
    out.push_back(xk);
    xk = (Ap * xk).eval();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Identifiability

Eigen::MatrixXd parameter_jacobian(const LinearDae& d,
                                   const std::vector<Eigen::VectorXd>& derivatives) {
  const int n = d.n();
  const int p = d.p();
  const int levels = static_cast<int>(derivatives.size());
  if (levels == 0) throw LinearError("parameter Jacobian needs at least the order-0 state");
  for (const auto& x : derivatives)
    if (x.size() != n) throw LinearError("derivative vector size mismatch");
  Eigen::MatrixXd I11 = Eigen::MatrixXd::Zero(levels * n, p);
  for (int c = 0; c < p; ++c) {
    auto [i, j] = d.theta[static_cast<std::size_t>(c)];
    for (int k = 0; k < levels; ++k)
      I11(k * n + i, c) = derivatives[static_cast<std::size_t>(k)][j];
  }
  return I11;
}

RankReport linear_identifiability(const LinearDae& d, const EvalPoint& pt, int mu,
                                  const RankOptions& opts) {
  validate_linear(d);
  if (mu < 0) throw LinearError("mu must be nonnegative");
  const int n = d.n();
  const int q = d.q();
  const int p = d.p();
  const int sigma = mu + 1;
  if (pt.max_order() < sigma)
    throw LinearError("evaluation point lacks derivatives up to order " + std::to_string(sigma));

  std::vector<Eigen::VectorXd> derivs(pt.state_derivatives.begin(),
                                      pt.state_derivatives.begin() + mu + 1);
  Eigen::MatrixXd I11 = parameter_jacobian(d, derivs);

  // Right block: the banded [A -E] rows over z = (x, x', ..., x^(sigma)),
  // with the C band underneath.
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(sigma * (n + q), p + (sigma + 1) * n);
  M.block(0, 0, sigma * n, p) = I11;
  for (int k = 0; k < sigma; ++k) {
    M.block(k * n, p + k * n, n, n) = d.A;
    M.block(k * n, p + (k + 1) * n, n, n) = -d.E;
    M.block(sigma * n + k * q, p + k * n, q, n) = d.C;
  }
  return rank_condition_report(M, p, mu, mu, sigma, n, opts);
}

RankReport linear_identifiability_loop(const LinearDae& d, const EvalPoint& pt, int max_mu,
                                       const RankOptions& opts) {
  if (max_mu < 0) max_mu = d.n() + 1;
  RankReport report;
  int prev_recoverable = -1;
  int stalled = 0;
  for (int mu = 0; mu <= max_mu; ++mu) {
    if (pt.max_order() < mu + 1) break;  // report the deepest order available
    report = linear_identifiability(d, pt, mu, opts);
    if (report.satisfied) return report;
    int recoverable = report.rank_full - report.rank_right;
    stalled = (mu > 0 && recoverable == prev_recoverable) ? stalled + 1 : 0;
    if (stalled >= 4) return report;
    prev_recoverable = recoverable;
  }
  return report;
}

bool fullstate_identifiability(const LinearDae& d, const EvalPoint& pt, int mu,
                               const RankOptions& opts) {
  validate_linear(d);
  const int n = d.n();
  if (d.C.rows() != n || !d.C.isIdentity(0.0))
    throw LinearError("the full-state shortcut requires C = I");
  if (pt.max_order() < mu)
    throw LinearError("evaluation point lacks derivatives up to order " + std::to_string(mu));
  std::vector<Eigen::VectorXd> derivs(pt.state_derivatives.begin(),
                                      pt.state_derivatives.begin() + mu + 1);
  Eigen::MatrixXd I11 = parameter_jacobian(d, derivs);
  double tol;
  if (opts.tolerance) {
    tol = *opts.tolerance;
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(I11);
    double norm2 = svd.singularValues().size() > 0 ? svd.singularValues()[0] : 0.0;
    tol = default_tolerance_from_norm(norm2, mu + 1, n);
  }
  bool ok = numerical_rank(I11, tol) == d.p();
  if (ok) {
    // The shortcut implies the complete condition once the output band is
    // deep enough; confirm it within a couple of extra orders.
    int max_mu = std::min(d.n() + 2, pt.max_order() - 1);
    if (max_mu >= mu) {
      RankReport full = linear_identifiability_loop(d, pt, max_mu, opts);
      if (!full.satisfied)
        throw LinearError(
            "full-state shortcut and the complete rank condition disagree; tolerances are "
            "unreliable at this point");
    }
  }
  return ok;
}

SemiExplicitStructure semiexplicit_structure(const LinearDae& d) {
  auto [n1, n2] = require_partition(d);
  SemiExplicitStructure s;
  s.index1 = n2 == 0 || invertible_guarded(d.A22());
  if (n2 == 0) {
    s.a21_full_rank = true;
  } else {
    Eigen::MatrixXd A21 = d.A21();
    double tol = default_tolerance(A21, 1, d.n());
    s.a21_full_rank = numerical_rank(A21, tol) == std::min(n1, n2);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Symbolic conversion

DaeModel linear_to_dae(const LinearDae& d) {
  validate_linear(d);
  const int n = d.n();
  DaeModel m;
  m.name = "linear";
  int n1 = d.partition ? d.partition->first : n;
  int n2 = d.partition ? d.partition->second : 0;
  bool identity_E = d.E.isIdentity(0.0);
  if (!d.partition && !identity_E)
    throw LinearError("symbolic conversion needs the partitioned form or E = I");

  std::vector<SymbolId> xs;
  for (int i = 0; i < n; ++i) {
    std::string name = "x" + std::to_string(i + 1);
    SymbolKind kind = i < n1 ? SymbolKind::State : SymbolKind::AlgebraicState;
    SymbolId id = m.symbols->declare(name, kind);
    (i < n1 ? m.differential_states : m.algebraic_states).push_back(id);
    xs.push_back(id);
  }

  auto entry_name = [&](int i, int j) {
    if (n <= 9) return "a" + std::to_string(i + 1) + std::to_string(j + 1);
    return "a" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
  };
  std::map<std::pair<int, int>, Expr> coeff;
  for (auto [i, j] : d.theta) {
    SymbolId pid = m.symbols->declare(entry_name(i, j), SymbolKind::Parameter);
    m.parameters.push_back(pid);
    m.parameter_values[pid] = d.A(i, j);
    coeff[{i, j}] = Expr::symbol(pid);
  }

  auto row_expr = [&](int i) {
    Expr sum = Expr::constant(0.0);
    for (int j = 0; j < n; ++j) {
      auto it = coeff.find({i, j});
      Expr c = it != coeff.end() ? it->second : Expr::constant(d.A(i, j));
      sum = sum + c * Expr::symbol(xs[static_cast<std::size_t>(j)]);
    }
    return sum;
  };

  for (int i = 0; i < n1; ++i) m.f1.push_back(row_expr(i));
  for (int i = n1; i < n; ++i) m.f2.push_back(row_expr(i));
  for (int r = 0; r < d.q(); ++r) {
    Expr sum = Expr::constant(0.0);
    for (int j = 0; j < n; ++j)
      sum = sum + Expr::constant(d.C(r, j)) * Expr::symbol(xs[static_cast<std::size_t>(j)]);
    m.outputs.push_back(sum);
  }
  (void)n2;
  validate_model(m);
  return m;
}

}  // namespace daeident
