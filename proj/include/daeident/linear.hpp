#pragma once

// Closed-form paths for linear descriptor systems E x' = A x, y = C x:
// the banded block observability matrix, the eigenvalue (PBH-style) sweep,
// the Kalman test for nonsingular E, the Kronecker-structured parameter
// Jacobian, and the concise identifiability condition with exact
// trajectory derivatives from the index-1 reduction.

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "daeident/model.hpp"
#include "daeident/ranktest.hpp"

namespace daeident {

class LinearError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularPencilError : public LinearError {
 public:
  using LinearError::LinearError;
};

struct LinearDae {
  Eigen::MatrixXd E, A, C;
  // Semi-explicit split (n1 differential, n2 algebraic) with E = diag(I, 0).
  std::optional<std::pair<int, int>> partition;
  // Free entries of A sought to be identified, (row, col) 0-based, ordered.
  std::vector<std::pair<int, int>> theta;

  int n() const { return static_cast<int>(A.rows()); }
  int q() const { return static_cast<int>(C.rows()); }
  int p() const { return static_cast<int>(theta.size()); }

  Eigen::MatrixXd A11() const;
  Eigen::MatrixXd A12() const;
  Eigen::MatrixXd A21() const;
  Eigen::MatrixXd A22() const;
};

void validate_linear(const LinearDae& d);

// Free-entry lists in column-major vectorization order.  Blocks are named
// "A", "A11", "A12", "A21", "A22"; several blocks concatenate.
std::vector<std::pair<int, int>> theta_block(const LinearDae& d,
                                             const std::vector<std::string>& blocks);
std::vector<std::pair<int, int>> theta_from_mask(const Eigen::Matrix<bool, Eigen::Dynamic,
                                                                     Eigen::Dynamic>& mask);
// All nonzero entries of A, column-major.
std::vector<std::pair<int, int>> theta_nonzero(const LinearDae& d);

// The banded block matrix with rows [A -E] per level and a C band below.
Eigen::MatrixXd descriptor_observability_matrix(const LinearDae& d, int levels);

// Block-matrix R-observability test: rank(O) == n + rank of the derivative
// columns, with `levels` = n.
bool block_r_observable(const LinearDae& d);

// rank[lambda E - A; C] == n at every finite generalized eigenvalue of the
// pencil plus one probe point.  Throws SingularPencilError when
// det(lambda E - A) vanishes identically.
bool pbh_r_observable(const LinearDae& d);

// Kalman rank test on E^{-1} A; requires nonsingular E.
bool kalman_observable(const LinearDae& d);

// A_c = A11 - A12 A22^{-1} A21 (index-1 reduction); requires the partition
// and nonsingular A22.
Eigen::MatrixXd reduced_matrix(const LinearDae& d);

// Consistent state [x1; -A22^{-1} A21 x1] for partitioned systems; for
// nonsingular E the input is the full state and is returned unchanged.
Eigen::VectorXd linear_consistent_state(const LinearDae& d, const Eigen::VectorXd& x1);

// Exact derivative arrays (x, x', ..., x^(sigma)) along the reduced flow.
std::vector<Eigen::VectorXd> linear_consistent_derivatives(const LinearDae& d,
                                                           const Eigen::VectorXd& x1, int sigma);

// Jacobian of the stacked products A x^(k), k = 0..mu, with respect to the
// free entries of A (columns ordered as d.theta).
Eigen::MatrixXd parameter_jacobian(const LinearDae& d,
                                   const std::vector<Eigen::VectorXd>& derivatives);

// Concise identifiability condition for linear descriptor systems at the
// given point, with mu = nu.
RankReport linear_identifiability(const LinearDae& d, const EvalPoint& pt, int mu,
                                  const RankOptions& opts = {});

// Raises mu until the condition holds or the recoverable rank plateaus
// (cap defaults to n + 1; full vec(A) with C = I first holds at mu = n).
RankReport linear_identifiability_loop(const LinearDae& d, const EvalPoint& pt,
                                       int max_mu = -1, const RankOptions& opts = {});

// Full-state-measurement shortcut: rank of the parameter Jacobian alone
// equals p.  Requires C == I; a positive answer is cross-checked against
// the full condition.
bool fullstate_identifiability(const LinearDae& d, const EvalPoint& pt, int mu,
                               const RankOptions& opts = {});

struct SemiExplicitStructure {
  bool index1 = false;         // A22 nonsingular (condition number guarded)
  bool a21_full_rank = false;  // rank(A21) == min(n1, n2)
};

SemiExplicitStructure semiexplicit_structure(const LinearDae& d);

// Symbolic model with the free entries of A promoted to parameters, so the
// generic stacked-derivative pipeline runs on the same system.  Implicit
// residuals always; the semi-explicit split is filled in when E is the
// partitioned identity/zero block form or the identity.
DaeModel linear_to_dae(const LinearDae& d);

}  // namespace daeident
