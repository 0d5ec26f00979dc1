#include "geoinpaint/linalg.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace geoinpaint {

SvdResult svd(const DenseMatrix& a) {
  if (!a.allFinite()) throw SvdFailure("svd: input has non-finite entries");
  Eigen::BDCSVD<DenseMatrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (dec.info() != Eigen::Success)
    throw SvdFailure(fmt::format("svd: no convergence on {}x{} matrix", a.rows(), a.cols()));
  return {dec.matrixU(), dec.singularValues(), dec.matrixV()};
}

SvtResult svt_with_stats(const DenseMatrix& a, double threshold) {
  if (!(threshold >= 0.0)) throw std::invalid_argument(fmt::format("svt: threshold {} < 0", threshold));
  SvdResult dec = svd(a);
  Eigen::Index kept = 0;
  double nuclear = 0.0;
  for (Eigen::Index r = 0; r < dec.s.size(); ++r) {
    const double shrunk = std::max(dec.s(r) - threshold, 0.0);
    if (shrunk > 0.0) kept = r + 1;
    dec.s(r) = shrunk;
    nuclear += shrunk;
  }
  SvtResult out;
  out.rank = kept;
  out.shrunk_nuclear_norm = nuclear;
  if (kept == 0) {
    out.matrix = DenseMatrix::Zero(a.rows(), a.cols());
  } else {
    out.matrix = dec.u.leftCols(kept) * dec.s.head(kept).asDiagonal() * dec.v.leftCols(kept).transpose();
  }
  return out;
}

DenseMatrix svt(const DenseMatrix& a, double threshold) { return svt_with_stats(a, threshold).matrix; }

DifferenceOperator build_difference_operator(Eigen::Index n) {
  if (n < 2) throw std::invalid_argument(fmt::format("difference operator needs n >= 2, got {}", n));
  DifferenceOperator d{n, DenseMatrix::Zero(n - 1, n)};
  for (Eigen::Index r = 0; r + 1 < n; ++r) {
    d.matrix(r, r) = -1.0;
    d.matrix(r, r + 1) = 1.0;
  }
  return d;
}

RegularizedSolver::RegularizedSolver(const DifferenceOperator& d, double beta, double rho)
    : n_(d.n), beta_(beta), rho_(rho) {
  if (!(beta >= 0.0)) throw std::invalid_argument(fmt::format("regularized solver: beta {} < 0", beta));
  if (!(rho > 0.0)) throw std::invalid_argument(fmt::format("regularized solver: rho {} <= 0", rho));

  // D^T D = tridiag(-1; 1, 2, ..., 2, 1; -1)
  Eigen::VectorXd main(n_);
  off_ = Eigen::VectorXd::Constant(std::max<Eigen::Index>(n_ - 1, 0), -beta);
  for (Eigen::Index r = 0; r < n_; ++r) {
    const double degree = (r == 0 || r == n_ - 1) ? 1.0 : 2.0;
    main(r) = beta * (n_ == 1 ? 0.0 : degree) + rho;
  }

  diag_.resize(n_);
  sub_.resize(std::max<Eigen::Index>(n_ - 1, 0));
  diag_(0) = main(0);
  for (Eigen::Index r = 1; r < n_; ++r) {
    sub_(r - 1) = off_(r - 1) / diag_(r - 1);
    diag_(r) = main(r) - sub_(r - 1) * off_(r - 1);
    if (!(diag_(r) > 0.0))
      throw std::runtime_error(fmt::format("regularized solver: LDL^T pivot {} is not positive", r));
  }
}

void RegularizedSolver::solve_in_place(DenseMatrix& b) const {
  if (b.rows() != n_)
    throw std::invalid_argument(fmt::format("regularized solve: rhs has {} rows, expected {}", b.rows(), n_));
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    auto x = b.col(c);
    for (Eigen::Index r = 1; r < n_; ++r) x(r) -= sub_(r - 1) * x(r - 1);
    for (Eigen::Index r = 0; r < n_; ++r) x(r) /= diag_(r);
    for (Eigen::Index r = n_ - 2; r >= 0; --r) x(r) -= sub_(r) * x(r + 1);
  }
}

DenseMatrix RegularizedSolver::system_matrix() const {
  DenseMatrix m = DenseMatrix::Zero(n_, n_);
  for (Eigen::Index r = 0; r < n_; ++r) {
    const double degree = (r == 0 || r == n_ - 1) ? 1.0 : 2.0;
    m(r, r) = beta_ * degree + rho_;
    if (r + 1 < n_) m(r, r + 1) = m(r + 1, r) = off_(r);
  }
  return m;
}

RegularizedSolver precompute_solver(const DifferenceOperator& d, double beta, double rho) {
  return RegularizedSolver(d, beta, rho);
}

}  // namespace geoinpaint
