#pragma once

#include "geoinpaint/linalg.hpp"
#include "geoinpaint/tensor.hpp"

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoinpaint {

/// Solver configuration. The SVT threshold is alpha / rho.
struct AdmmParams {
  double alpha = 0.1;
  double beta = 0.0;
  double rho = 1.0;
  std::size_t max_iters = 500;
  double rel_tol = 1e-6;

  /// beta = 0.1 * rho, the default coupling used by the hyperparameter search.
  static AdmmParams with_default_beta(double alpha, double rho, std::size_t max_iters = 500, double rel_tol = 1e-6) {
    return {alpha, 0.1 * rho, rho, max_iters, rel_tol};
  }

  void validate() const;
};

/// Raised when an iterate becomes non-finite.
struct DivergenceError : std::runtime_error {
  DivergenceError(std::size_t iteration, int lane, const std::string& detail);
  std::size_t iteration;
  int lane;
};

struct IterationRecord {
  std::size_t iteration = 0;
  double rel_change = 0.0;       ///< ||Xhat^{k+1} - Xhat^k||_F / ||Xhat^k||_F
  double primal_residual = 0.0;  ///< ||X - Z||_F over the stacked lanes, before averaging
  double nuclear_surrogate = 0.0;///< sum over modes of ||Z_(n)||_*

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct ConvergenceTrace {
  std::vector<IterationRecord> records;
  bool converged = false;

  [[nodiscard]] std::size_t iterations() const { return records.size(); }
  void write_csv(std::ostream& os) const;
};

/// Iterate state of the three-lane ADMM. x_lanes hold the restacked average
/// between iterations, so all three are equal to `estimate` outside of a step.
struct AdmmState {
  std::array<Field3, 3> x_lanes;
  std::array<Field3, 3> z_lanes;
  std::array<Field3, 3> t_lanes;
  Field3 estimate;
  std::size_t iteration = 0;
};

/// Precomputed lateral smoothing solvers for modes 0 and 1. Absent solvers mean the
/// lane uses the unsmoothed update Z - T / rho.
struct SmoothingSolvers {
  std::optional<RegularizedSolver> mode0;
  std::optional<RegularizedSolver> mode1;
};

[[nodiscard]] SmoothingSolvers make_smoothing_solvers(const Dims3& dims, const AdmmParams& params);

/// Stacks P_Omega(y) into all three x lanes, zero Z and T.
[[nodiscard]] AdmmState initial_state(const Field3& y, const Mask3& mask);

/// One full iteration: mode-wise SVT, smoothing solves, data consistency, dual
/// update, averaging and restacking. Returns the record describing the step.
IterationRecord admm_step(AdmmState& state, const Field3& y, const Mask3& mask, const AdmmParams& params,
                          const SmoothingSolvers& solvers);

/// True iff the latest relative iterate change is below params.rel_tol.
[[nodiscard]] bool check_convergence(const ConvergenceTrace& trace, const AdmmParams& params);

struct CompletionResult {
  Field3 reconstruction;
  ConvergenceTrace trace;
};

/// Sum-of-nuclear-norms completion with three averaged mode-wise ADMM lanes.
[[nodiscard]] CompletionResult complete_plain(const Field3& y, const Mask3& mask, const AdmmParams& params);

/// Same iteration with graph-Laplacian smoothing of lanes 0 and 1 along their
/// horizontal axes.
[[nodiscard]] CompletionResult complete_smoothed(const Field3& y, const Mask3& mask, const AdmmParams& params);

}  // namespace geoinpaint
