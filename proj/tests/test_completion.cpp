#include "geoinpaint/completion.hpp"
#include "geoinpaint/synthetic.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

namespace geoinpaint {
namespace {

using testing::random_field;
using testing::random_mask;

Field3 observed(const Field3& truth, const Mask3& m) { return project(truth, m); }

// Returns f with axes (i, j, k) relabelled as (j, k, i).
template <class F>
F rotate_axes(const F& f) {
  const Dims3 d = f.dims();
  F out(Dims3(d.j, d.k, d.i));
  for (std::size_t k = 0; k < d.k; ++k)
    for (std::size_t j = 0; j < d.j; ++j)
      for (std::size_t i = 0; i < d.i; ++i) {
        if constexpr (std::is_same_v<F, Mask3>)
          out.set(j, k, i, f(i, j, k));
        else
          out(j, k, i) = f(i, j, k);
      }
  return out;
}

TEST(AdmmParams, Validation) {
  EXPECT_NO_THROW(AdmmParams{}.validate());
  EXPECT_THROW((AdmmParams{0.1, 0.0, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((AdmmParams{-0.1, 0.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((AdmmParams{0.1, -1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((AdmmParams{0.1, 0.0, 1.0, 0}.validate()), std::invalid_argument);
  EXPECT_DOUBLE_EQ(AdmmParams::with_default_beta(0.2, 3.0).beta, 0.3);
}

TEST(Completion, FullyObservedReturnsInput) {
  const Dims3 d(4, 5, 3);
  const Field3 y = random_field(d, 1);
  const Mask3 all(d, true);
  for (auto* solve : {&complete_plain, &complete_smoothed}) {
    const CompletionResult r = (*solve)(y, all, AdmmParams::with_default_beta(0.1, 1.0));
    EXPECT_EQ(r.reconstruction, y);
    EXPECT_TRUE(r.trace.converged);
  }
}

TEST(Completion, ObservedCellsAreExactAndUnobservedAreFinite) {
  const Dims3 d(6, 7, 5);
  const Field3 truth = random_field(d, 2);
  const Mask3 m = random_mask(d, 0.4, 3);
  const Field3 y = observed(truth, m);
  const CompletionResult r = complete_smoothed(y, m, AdmmParams::with_default_beta(0.5, 1.0, 50));
  for (std::size_t c = 0; c < y.size(); ++c) {
    if (m[c]) {
      EXPECT_EQ(r.reconstruction[c], y[c]);
    }
    EXPECT_TRUE(std::isfinite(r.reconstruction[c]));
  }
}

TEST(Completion, UnobservedEntriesOfInputAreIgnored) {
  const Dims3 d(5, 5, 5);
  const Field3 truth = random_field(d, 4);
  const Mask3 m = random_mask(d, 0.5, 5);
  Field3 noisy = truth;
  for (std::size_t c = 0; c < noisy.size(); ++c)
    if (!m[c]) noisy[c] = 1e6;
  const AdmmParams p{0.5, 0.05, 1.0, 40, 1e-9};
  EXPECT_EQ(complete_smoothed(noisy, m, p).reconstruction, complete_smoothed(observed(truth, m), m, p).reconstruction);
}

TEST(Completion, RecoversSingleMissingCellOfRankOne) {
  const Dims3 d(2, 2, 2);
  const Eigen::Vector2d u(1.0, 0.8), v(1.2, 0.9), w(0.7, 1.1);
  Field3 truth(d);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < 2; ++i) truth(i, j, k) = u(i) * v(j) * w(k);
  Mask3 m(d, true);
  m.set(1, 1, 1, false);
  const CompletionResult r = complete_plain(observed(truth, m), m, AdmmParams{0.01, 0.0, 1.0, 20000, 1e-13});
  EXPECT_NEAR(r.reconstruction(1, 1, 1), u(1) * v(1) * w(1), 1e-4);
}

TEST(Completion, RankOneHalfObserved) {
  const Dims3 d(10, 10, 10);
  const auto truth = synthetic::rank1_field(d, 1);
  const Mask3 m = synthetic::uniform_mask(d, 0.5, 101);
  const CompletionResult r = complete_plain(observed(truth.field, m), m, AdmmParams{0.5, 0.0, 1.0, 300, 1e-12});
  EXPECT_LE(rse(r.reconstruction, truth.field, m), 1e-2);
  EXPECT_LE(r.trace.records.size(), 300u);
}

TEST(Completion, PrimalResidualVanishesOnRankOne) {
  const Dims3 d(10, 10, 10);
  const auto truth = synthetic::rank1_field(d, 1);
  const Mask3 m = synthetic::uniform_mask(d, 0.5, 101);
  const Field3 y = observed(truth.field, m);
  const CompletionResult r = complete_plain(y, m, AdmmParams{0.5, 0.0, 1.0, 2000, 1e-12});
  EXPECT_LE(r.trace.records.back().primal_residual, 1e-3 * frobenius_norm(y));
}

TEST(Completion, DeterministicAcrossRuns) {
  const Dims3 d(6, 6, 6);
  const Field3 y = random_field(d, 7);
  const Mask3 m = random_mask(d, 0.3, 8);
  const AdmmParams p = AdmmParams::with_default_beta(0.3, 1.0, 60);
  const CompletionResult a = complete_smoothed(project(y, m), m, p);
  const CompletionResult b = complete_smoothed(project(y, m), m, p);
  EXPECT_EQ(a.reconstruction, b.reconstruction);
  EXPECT_EQ(a.trace.records, b.trace.records);
}

TEST(Completion, PlainIsInvariantUnderAxisRelabelling) {
  const Dims3 d(5, 6, 4);
  const Field3 truth = random_field(d, 9);
  const Mask3 m = random_mask(d, 0.5, 10);
  const AdmmParams p{0.4, 0.0, 1.0, 80, 1e-12};
  const Field3 direct = rotate_axes(complete_plain(observed(truth, m), m, p).reconstruction);
  const Mask3 rm = rotate_axes(m);
  const Field3 rotated = complete_plain(observed(rotate_axes(truth), rm), rm, p).reconstruction;
  ASSERT_EQ(direct.dims(), rotated.dims());
  for (std::size_t c = 0; c < direct.size(); ++c) EXPECT_NEAR(direct[c], rotated[c], 1e-9);
}

TEST(Completion, SmoothingHelpsOnLayeredField) {
  const Dims3 d(16, 16, 9);
  const Field3 truth = synthetic::layered_field(d);
  const Mask3 m = synthetic::uniform_mask(d, 0.1, 12);
  const Field3 y = observed(truth, m);
  const double plain = rse(complete_plain(y, m, AdmmParams{0.1, 0.0, 0.5, 300, 1e-7}).reconstruction, truth, m);
  const double smooth =
      rse(complete_smoothed(y, m, AdmmParams::with_default_beta(0.1, 0.5, 300, 1e-7)).reconstruction, truth, m);
  EXPECT_LT(smooth, plain);
}

TEST(AdmmStep, SteppingReproducesDriverTrace) {
  const Dims3 d(5, 4, 6);
  const Field3 y = random_field(d, 13);
  const Mask3 m = random_mask(d, 0.4, 14);
  const AdmmParams p = AdmmParams::with_default_beta(0.3, 0.7, 25, 1e-300);
  const Field3 py = project(y, m);
  const CompletionResult driver = complete_smoothed(py, m, p);

  AdmmState st = initial_state(py, m);
  const SmoothingSolvers solvers = make_smoothing_solvers(d, p);
  std::vector<IterationRecord> records;
  for (std::size_t it = 0; it < p.max_iters; ++it) records.push_back(admm_step(st, py, m, p, solvers));
  EXPECT_EQ(records, driver.trace.records);
  EXPECT_EQ(st.estimate, driver.reconstruction);
}

TEST(AdmmStep, InitialStateZeroFillsAndStacks) {
  const Dims3 d(3, 3, 3);
  const Field3 y = random_field(d, 15);
  const Mask3 m = random_mask(d, 0.5, 16);
  const AdmmState st = initial_state(y, m);
  for (int n = 0; n < 3; ++n) {
    EXPECT_EQ(st.x_lanes[n], project(y, m));
    EXPECT_EQ(st.z_lanes[n], Field3(d));
    EXPECT_EQ(st.t_lanes[n], Field3(d));
  }
  EXPECT_EQ(st.iteration, 0u);
}

TEST(AdmmStep, DataConsistencyAfterEveryStep) {
  const Dims3 d(6, 5, 4);
  const Field3 y = project(random_field(d, 17), random_mask(d, 1.0, 0));
  const Mask3 m = random_mask(d, 0.35, 18);
  const AdmmParams p = AdmmParams::with_default_beta(0.2, 1.0);
  AdmmState st = initial_state(y, m);
  const SmoothingSolvers solvers = make_smoothing_solvers(d, p);
  for (int it = 0; it < 20; ++it) {
    (void)admm_step(st, y, m, p, solvers);
    for (int n = 0; n < 3; ++n)
      for (std::size_t c = 0; c < y.size(); ++c)
        if (m[c]) {
          ASSERT_EQ(st.x_lanes[n][c], y[c]);
        }
  }
}

TEST(AdmmStep, HugeThresholdZeroesEveryLane) {
  const Dims3 d(4, 4, 4);
  const Field3 y = random_field(d, 19);
  const Mask3 m = random_mask(d, 0.5, 20);
  const AdmmParams p{1e6, 0.0, 1.0};
  AdmmState st = initial_state(y, m);
  const IterationRecord rec = admm_step(st, y, m, p, make_smoothing_solvers(d, p));
  for (int n = 0; n < 3; ++n) EXPECT_EQ(st.z_lanes[n], Field3(d));
  EXPECT_EQ(rec.nuclear_surrogate, 0.0);
}

TEST(AdmmStep, ZeroBetaSolverMatchesUnsmoothedLane) {
  const Dims3 d(5, 6, 4);
  const Field3 y = random_field(d, 21);
  const Mask3 m = random_mask(d, 0.4, 22);
  const AdmmParams p{0.3, 0.0, 1.7};
  SmoothingSolvers explicit_zero;
  explicit_zero.mode0 = precompute_solver(build_difference_operator(d.i), 0.0, p.rho);
  explicit_zero.mode1 = precompute_solver(build_difference_operator(d.j), 0.0, p.rho);
  AdmmState a = initial_state(y, m), b = initial_state(y, m);
  for (int it = 0; it < 10; ++it) {
    (void)admm_step(a, y, m, p, explicit_zero);
    (void)admm_step(b, y, m, p, SmoothingSolvers{});
  }
  for (std::size_t c = 0; c < y.size(); ++c) EXPECT_NEAR(a.estimate[c], b.estimate[c], 1e-12);
}

TEST(AdmmStep, ZLanesAreThresholdingFixedPointAtConvergence) {
  const Dims3 d(4, 4, 4);
  const auto truth = synthetic::rank1_field(d, 3);
  const Mask3 m = synthetic::uniform_mask(d, 0.6, 23);
  const Field3 y = project(truth.field, m);
  const AdmmParams p{0.2, 0.0, 1.0};
  AdmmState st = initial_state(y, m);
  for (int it = 0; it < 5000; ++it) (void)admm_step(st, y, m, p, SmoothingSolvers{});
  for (int n = 0; n < 3; ++n) {
    Field3 w = st.t_lanes[n];
    w *= 1.0 / p.rho;
    w += st.estimate;
    const Field3 prox = fold(Unfolding{n, svt(unfold(w, n).matrix, p.alpha / p.rho)}, d);
    for (std::size_t c = 0; c < w.size(); ++c) EXPECT_NEAR(prox[c], st.z_lanes[n][c], 1e-6);
  }
}

TEST(AdmmStep, NonFiniteIterateRaisesDivergence) {
  const Dims3 d(3, 3, 3);
  Field3 y(d);
  for (std::size_t c = 0; c < y.size(); ++c) y[c] = 1e308;
  const Mask3 m = random_mask(d, 0.5, 24);
  try {
    (void)complete_plain(project(y, m), m, AdmmParams{1e-3, 0.0, 1e10, 10, 1e-300});
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_LT(e.iteration, 10u);
  }
}

TEST(Convergence, GeometricDecayStopsAtTenthRecord) {
  const AdmmParams p{0.1, 0.0, 1.0, 500, 1e-3};
  ConvergenceTrace trace;
  std::size_t stop = 0;
  for (std::size_t k = 0; k < 20; ++k) {
    trace.records.push_back({k, std::pow(0.5, static_cast<double>(k)), 0.0, 0.0});
    if (check_convergence(trace, p)) {
      stop = k;
      break;
    }
  }
  EXPECT_EQ(stop, 10u);
}

TEST(Convergence, IdenticalIteratesConvergeLargeChangeDoesNot) {
  const AdmmParams p{};
  ConvergenceTrace trace;
  EXPECT_THROW((void)check_convergence(trace, p), std::invalid_argument);
  trace.records.push_back({0, 0.5, 0.0, 0.0});
  EXPECT_FALSE(check_convergence(trace, p));
  trace.records.push_back({1, 0.0, 0.0, 0.0});
  EXPECT_TRUE(check_convergence(trace, p));
}

TEST(Convergence, DriverStopsWhenChangeFallsBelowTolerance) {
  const Dims3 d(6, 6, 6);
  const auto truth = synthetic::rank1_field(d, 5);
  const Mask3 m = synthetic::uniform_mask(d, 0.5, 25);
  const CompletionResult r = complete_plain(project(truth.field, m), m, AdmmParams{0.5, 0.0, 1.0, 5000, 1e-6});
  ASSERT_TRUE(r.trace.converged);
  EXPECT_LT(r.trace.records.back().rel_change, 1e-6);
  for (std::size_t k = 0; k + 1 < r.trace.records.size(); ++k) EXPECT_GE(r.trace.records[k].rel_change, 1e-6);
}

TEST(Convergence, TraceCsvHasHeaderAndOneRowPerIteration) {
  ConvergenceTrace trace;
  trace.records = {{0, 1.0, 2.0, 3.0}, {1, 0.5, 0.25, 0.125}};
  std::ostringstream os;
  trace.write_csv(os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "iteration,rel_change,primal_residual,nuclear_surrogate");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 2);
}

TEST(SmoothingSolvers, RequireTwoCellsAlongSmoothedAxes) {
  const AdmmParams p = AdmmParams::with_default_beta(0.1, 1.0);
  EXPECT_THROW((void)make_smoothing_solvers(Dims3(1, 4, 4), p), std::invalid_argument);
  const SmoothingSolvers s = make_smoothing_solvers(Dims3(3, 4, 1), p);
  EXPECT_TRUE(s.mode0.has_value());
  EXPECT_TRUE(s.mode1.has_value());
  EXPECT_FALSE(make_smoothing_solvers(Dims3(1, 1, 4), AdmmParams{}).mode0.has_value());
}

}  // namespace
}  // namespace geoinpaint
