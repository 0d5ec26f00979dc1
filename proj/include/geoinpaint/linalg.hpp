#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace geoinpaint {

using DenseMatrix = Eigen::MatrixXd;

struct SvdFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thin SVD, A = U * diag(s) * V^T, with s nonincreasing.
struct SvdResult {
  DenseMatrix u;
  Eigen::VectorXd s;
  DenseMatrix v;
};

[[nodiscard]] SvdResult svd(const DenseMatrix& a);

/// Result of singular value soft-thresholding. `shrunk_nuclear_norm` is the
/// nuclear norm of the returned matrix (sum of max(sigma - t, 0)).
struct SvtResult {
  DenseMatrix matrix;
  double shrunk_nuclear_norm = 0.0;
  Eigen::Index rank = 0;
};

/// U * diag(max(sigma - threshold, 0)) * V^T.
[[nodiscard]] SvtResult svt_with_stats(const DenseMatrix& a, double threshold);
[[nodiscard]] DenseMatrix svt(const DenseMatrix& a, double threshold);

/// Forward difference matrix on a path of n nodes: (n-1) x n, row r = e_{r+1} - e_r.
/// No wraparound and no boundary row.
struct DifferenceOperator {
  Eigen::Index n = 0;
  DenseMatrix matrix;
};

[[nodiscard]] DifferenceOperator build_difference_operator(Eigen::Index n);

/// Applies (beta * D^T D + rho * I)^{-1}. D^T D is the path-graph Laplacian, so the
/// system is symmetric tridiagonal and is held as an LDL^T factorization.
class RegularizedSolver {
public:
  RegularizedSolver() = default;
  RegularizedSolver(const DifferenceOperator& d, double beta, double rho);

  [[nodiscard]] Eigen::Index size() const { return n_; }
  [[nodiscard]] double beta() const { return beta_; }
  [[nodiscard]] double rho() const { return rho_; }

  /// Solves column-wise in place: b <- M^{-1} b, where b has size() rows.
  void solve_in_place(DenseMatrix& b) const;
  [[nodiscard]] DenseMatrix solve(DenseMatrix b) const {
    solve_in_place(b);
    return b;
  }

  /// The assembled system matrix beta * D^T D + rho * I.
  [[nodiscard]] DenseMatrix system_matrix() const;

private:
  Eigen::Index n_ = 0;
  double beta_ = 0.0;
  double rho_ = 1.0;
  Eigen::VectorXd diag_;     // D of LDL^T
  Eigen::VectorXd sub_;      // unit-lower subdiagonal of L
  Eigen::VectorXd off_;      // off-diagonal of the system matrix
};

[[nodiscard]] RegularizedSolver precompute_solver(const DifferenceOperator& d, double beta, double rho);

}  // namespace geoinpaint
