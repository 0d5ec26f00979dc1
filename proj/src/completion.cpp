#include "geoinpaint/completion.hpp"

#include <fmt/format.h>

#include <cmath>
#include <ostream>

namespace geoinpaint {

void AdmmParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument(fmt::format("alpha must be > 0, got {}", alpha));
  if (!(rho > 0.0)) throw std::invalid_argument(fmt::format("rho must be > 0, got {}", rho));
  if (!(beta >= 0.0)) throw std::invalid_argument(fmt::format("beta must be >= 0, got {}", beta));
  if (!(rel_tol > 0.0)) throw std::invalid_argument(fmt::format("rel_tol must be > 0, got {}", rel_tol));
  if (max_iters == 0) throw std::invalid_argument("max_iters must be positive");
}

DivergenceError::DivergenceError(std::size_t iter, int ln, const std::string& detail)
    : std::runtime_error(fmt::format("non-finite iterate at iteration {} lane {}: {}", iter, ln, detail)),
      iteration(iter),
      lane(ln) {}

void ConvergenceTrace::write_csv(std::ostream& os) const {
  os << "iteration,rel_change,primal_residual,nuclear_surrogate\n";
  for (const auto& r : records)
    os << fmt::format("{},{:.12e},{:.12e},{:.12e}\n", r.iteration, r.rel_change, r.primal_residual,
                      r.nuclear_surrogate);
}

SmoothingSolvers make_smoothing_solvers(const Dims3& dims, const AdmmParams& params) {
  SmoothingSolvers s;
  if (params.beta > 0.0) {
    if (dims.i < 2 || dims.j < 2)
      throw std::invalid_argument(
          fmt::format("smoothing needs at least 2 cells along i and j, got {}x{}", dims.i, dims.j));
    s.mode0 = precompute_solver(build_difference_operator(static_cast<Eigen::Index>(dims.i)), params.beta, params.rho);
    s.mode1 = precompute_solver(build_difference_operator(static_cast<Eigen::Index>(dims.j)), params.beta, params.rho);
  }
  return s;
}

AdmmState initial_state(const Field3& y, const Mask3& mask) {
  Field3 start = project(y, mask);
  const Field3 zero(y.dims());
  AdmmState st;
  st.x_lanes = {start, start, start};
  st.z_lanes = {zero, zero, zero};
  st.t_lanes = {zero, zero, zero};
  st.estimate = std::move(start);
  return st;
}

namespace {

void require_finite(const Field3& f, std::size_t iteration, int lane, const char* what) {
  if (!f.all_finite()) throw DivergenceError(iteration, lane, what);
}

}  // namespace

IterationRecord admm_step(AdmmState& st, const Field3& y, const Mask3& mask, const AdmmParams& params,
                          const SmoothingSolvers& solvers) {
  const Dims3 dims = y.dims();
  const double rho = params.rho;
  const double inv_rho = 1.0 / rho;
  const double threshold = params.alpha / rho;
  IterationRecord rec;
  rec.iteration = st.iteration;

  // Mode-wise singular value thresholding.
  for (int n = 0; n < 3; ++n) {
    Field3 w = st.x_lanes[n];
    const auto t = st.t_lanes[n].values();
    auto wv = w.values();
    for (std::size_t c = 0; c < wv.size(); ++c) wv[c] += inv_rho * t[c];
    require_finite(w, st.iteration, n, "SVT input");
    SvtResult shrunk = svt_with_stats(unfold(w, n).matrix, threshold);
    rec.nuclear_surrogate += shrunk.shrunk_nuclear_norm;
    st.z_lanes[n] = fold(Unfolding{n, std::move(shrunk.matrix)}, dims);
    require_finite(st.z_lanes[n], st.iteration, n, "Z after SVT");
  }

  // Graph-smooth updates, then data consistency on the observed cells.
  std::array<const RegularizedSolver*, 3> lane_solver = {
      solvers.mode0 ? &*solvers.mode0 : nullptr, solvers.mode1 ? &*solvers.mode1 : nullptr, nullptr};
  double residual_sq = 0.0;
  for (int n = 0; n < 3; ++n) {
    const auto z = st.z_lanes[n].values();
    const auto t = st.t_lanes[n].values();
    Field3 v(dims);
    auto vv = v.values();
    if (lane_solver[n] != nullptr) {
      for (std::size_t c = 0; c < vv.size(); ++c) vv[c] = rho * z[c] - t[c];
      Unfolding rhs = unfold(v, n);
      lane_solver[n]->solve_in_place(rhs.matrix);
      v = fold(rhs, dims);
      vv = v.values();
    } else {
      for (std::size_t c = 0; c < vv.size(); ++c) vv[c] = z[c] - inv_rho * t[c];
    }
    for (std::size_t c = 0; c < vv.size(); ++c)
      if (mask[c]) vv[c] = y[c];
    require_finite(v, st.iteration, n, "X after smoothing update");

    for (std::size_t c = 0; c < vv.size(); ++c) {
      const double diff = vv[c] - z[c];
      residual_sq += diff * diff;
    }
    st.x_lanes[n] = std::move(v);
  }
  rec.primal_residual = std::sqrt(residual_sq);

  // Dual update on the stacked lanes.
  for (int n = 0; n < 3; ++n) {
    auto t = st.t_lanes[n].values();
    const auto x = st.x_lanes[n].values();
    const auto z = st.z_lanes[n].values();
    for (std::size_t c = 0; c < t.size(); ++c) t[c] += rho * (x[c] - z[c]);
    require_finite(st.t_lanes[n], st.iteration, n, "dual after update");
  }

  // Average the lanes. Observed cells agree across lanes, so they are copied from y
  // rather than averaged to keep them bit-exact.
  Field3 next(dims);
  {
    auto nv = next.values();
    const auto x0 = st.x_lanes[0].values();
    const auto x1 = st.x_lanes[1].values();
    const auto x2 = st.x_lanes[2].values();
    for (std::size_t c = 0; c < nv.size(); ++c) nv[c] = mask[c] ? y[c] : (x0[c] + x1[c] + x2[c]) / 3.0;
  }

  const double prev_norm = frobenius_norm(st.estimate);
  const double change = frobenius_norm(next - st.estimate);
  rec.rel_change = prev_norm > 0.0 ? change / prev_norm : change;

  st.x_lanes = {next, next, next};
  st.estimate = std::move(next);
  ++st.iteration;
  return rec;
}

bool check_convergence(const ConvergenceTrace& trace, const AdmmParams& params) {
  if (trace.records.empty()) throw std::invalid_argument("check_convergence: empty trace");
  return trace.records.back().rel_change < params.rel_tol;
}

namespace {

CompletionResult run_admm(const Field3& y, const Mask3& mask, const AdmmParams& params, bool smoothed) {
  params.validate();
  if (!(y.dims() == mask.dims())) throw std::invalid_argument("completion: field and mask dims differ");
  const std::size_t observed = mask.count_observed();
  if (observed == 0) throw std::invalid_argument("completion: mask observes no cells");

  CompletionResult out;
  if (observed == mask.size()) {
    out.reconstruction = y;
    out.trace.converged = true;
    return out;
  }

  const SmoothingSolvers solvers = smoothed ? make_smoothing_solvers(y.dims(), params) : SmoothingSolvers{};
  AdmmState st = initial_state(y, mask);
  for (std::size_t it = 0; it < params.max_iters; ++it) {
    out.trace.records.push_back(admm_step(st, y, mask, params, solvers));
    if (check_convergence(out.trace, params)) {
      out.trace.converged = true;
      break;
    }
  }
  out.reconstruction = project_complement(st.estimate, mask) + project(y, mask);
  return out;
}

}  // namespace

CompletionResult complete_plain(const Field3& y, const Mask3& mask, const AdmmParams& params) {
  return run_admm(y, mask, params, false);
}

CompletionResult complete_smoothed(const Field3& y, const Mask3& mask, const AdmmParams& params) {
  return run_admm(y, mask, params, true);
}

}  // namespace geoinpaint
