#include "geoinpaint/kriging.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <thread>

namespace geoinpaint {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kSillFloor = 1e-12;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 displacement(const Vec3& from, const Vec3& to, const CellSize& cell) {
  return cell.to_physical({to[0] - from[0], to[1] - from[1], to[2] - from[2]});
}

}  // namespace

std::array<Vec3, 3> ellipsoid_axes(const Orientation& o) {
  const double az = o.azimuth_deg * kDegToRad;
  const double dip = o.dip_deg * kDegToRad;
  const Vec3 major{std::sin(az) * std::cos(dip), std::cos(az) * std::cos(dip), -std::sin(dip)};
  const Vec3 minor{std::cos(az), -std::sin(az), 0.0};
  const Vec3 vertical{major[1] * minor[2] - major[2] * minor[1], major[2] * minor[0] - major[0] * minor[2],
                      major[0] * minor[1] - major[1] * minor[0]};
  return {major, minor, vertical};
}

double scaled_distance(const Vec3& h, const std::array<Vec3, 3>& axes, const Vec3& radii) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double c = dot(h, axes[a]) / radii[a];
    acc += c * c;
  }
  return std::sqrt(acc);
}

std::string to_string(VariogramKind kind) {
  switch (kind) {
    case VariogramKind::spherical: return "spherical";
    case VariogramKind::exponential: return "exponential";
    case VariogramKind::gaussian: return "gaussian";
  }
  return "unknown";
}

VariogramKind variogram_kind_from_string(const std::string& name) {
  if (name == "spherical") return VariogramKind::spherical;
  if (name == "exponential") return VariogramKind::exponential;
  if (name == "gaussian") return VariogramKind::gaussian;
  throw std::invalid_argument(fmt::format("unknown variogram kind '{}'", name));
}

double unit_structure(VariogramKind kind, double h) {
  switch (kind) {
    case VariogramKind::spherical: return h >= 1.0 ? 1.0 : 1.5 * h - 0.5 * h * h * h;
    case VariogramKind::exponential: return 1.0 - std::exp(-3.0 * h);
    case VariogramKind::gaussian: return 1.0 - std::exp(-3.0 * h * h);
  }
  return 1.0;
}

void VariogramModel::validate() const {
  if (!(nugget >= 0.0)) throw std::invalid_argument(fmt::format("variogram nugget {} < 0", nugget));
  if (!(sill > 0.0)) throw std::invalid_argument(fmt::format("variogram sill {} <= 0", sill));
  if (nugget > sill) throw std::invalid_argument(fmt::format("variogram nugget {} exceeds sill {}", nugget, sill));
  for (double r : ranges)
    if (!(r > 0.0)) throw std::invalid_argument(fmt::format("variogram range {} <= 0", r));
}

double VariogramModel::gamma(const Vec3& h) const {
  if (h[0] == 0.0 && h[1] == 0.0 && h[2] == 0.0) return 0.0;
  const double hs = scaled_distance(h, ellipsoid_axes(orientation), ranges);
  return nugget + (sill - nugget) * unit_structure(kind, hs);
}

double covariance(const VariogramModel& model, const Vec3& h) { return model.covariance(h); }

std::size_t EmpiricalVariogram::nonempty_bins() const {
  return static_cast<std::size_t>(std::count_if(pair_counts.begin(), pair_counts.end(), [](auto c) { return c > 0; }));
}

EmpiricalVariogram empirical_variogram(std::span<const SamplePoint> samples, double lag_width, std::size_t n_lags,
                                       const std::optional<DirectionFilter>& direction, const CellSize& cell,
                                       const PairSampling& sampling) {
  if (samples.size() < 2) throw std::invalid_argument("empirical variogram needs at least 2 samples");
  if (!(lag_width > 0.0)) throw std::invalid_argument(fmt::format("lag width {} <= 0", lag_width));
  if (n_lags == 0) throw std::invalid_argument("empirical variogram needs at least one lag");

  Vec3 unit_dir{};
  double cos_tol = 0.0;
  if (direction) {
    const double len = norm(direction->direction);
    if (!(len > 0.0)) throw std::invalid_argument("variogram direction must be nonzero");
    for (int a = 0; a < 3; ++a) unit_dir[a] = direction->direction[a] / len;
    cos_tol = std::cos(direction->tolerance_deg * kDegToRad);
  }

  std::vector<double> sum_sq(n_lags, 0.0), sum_dist(n_lags, 0.0);
  std::vector<std::size_t> counts(n_lags, 0);
  auto accumulate = [&](std::size_t a, std::size_t b) {
    const Vec3 h = displacement(samples[a].position, samples[b].position, cell);
    const double dist = norm(h);
    if (direction) {
      if (dist == 0.0 || std::abs(dot(h, unit_dir)) < cos_tol * dist) return;
    }
    const auto bin = static_cast<std::size_t>(dist / lag_width);
    if (bin >= n_lags) return;
    const double diff = samples[a].value - samples[b].value;
    sum_sq[bin] += diff * diff;
    sum_dist[bin] += dist;
    ++counts[bin];
  };

  const std::size_t n = samples.size();
  const double total_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  if (total_pairs <= static_cast<double>(sampling.max_pairs)) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) accumulate(a, b);
  } else {
    std::mt19937_64 rng(sampling.seed);
    for (std::size_t p = 0; p < sampling.max_pairs; ++p) {
      const std::size_t a = rng() % n;
      std::size_t b = rng() % (n - 1);
      if (b >= a) ++b;
      accumulate(a, b);
    }
  }

  EmpiricalVariogram out;
  out.lag_width = lag_width;
  out.direction = direction;
  out.lags.resize(n_lags);
  out.semivariance.resize(n_lags);
  out.pair_counts = counts;
  std::size_t total = 0;
  for (std::size_t b = 0; b < n_lags; ++b) {
    total += counts[b];
    if (counts[b] > 0) {
      out.lags[b] = sum_dist[b] / static_cast<double>(counts[b]);
      out.semivariance[b] = sum_sq[b] / (2.0 * static_cast<double>(counts[b]));
    } else {
      out.lags[b] = (static_cast<double>(b) + 0.5) * lag_width;
      out.semivariance[b] = 0.0;
    }
  }
  if (total == 0) throw std::runtime_error("empirical variogram: no valid pairs within the lag range");
  return out;
}

namespace {

struct LinearFit {
  double nugget = 0.0;
  double partial_sill = 0.0;
  double sse = 0.0;
};

/// For a fixed range, gamma = c0 + c1 f(h / range) is linear in (c0, c1); solve the
/// weighted least squares with c0, c1 >= 0.
LinearFit fit_for_range(const std::vector<double>& h, const std::vector<double>& g, const std::vector<double>& w,
                        VariogramKind kind, double range) {
  const std::size_t m = h.size();
  std::vector<double> f(m);
  double sw = 0, sf = 0, sff = 0, sg = 0, sfg = 0;
  for (std::size_t b = 0; b < m; ++b) {
    f[b] = unit_structure(kind, h[b] / range);
    sw += w[b];
    sf += w[b] * f[b];
    sff += w[b] * f[b] * f[b];
    sg += w[b] * g[b];
    sfg += w[b] * f[b] * g[b];
  }
  auto sse_of = [&](double c0, double c1) {
    double s = 0;
    for (std::size_t b = 0; b < m; ++b) {
      const double r = c0 + c1 * f[b] - g[b];
      s += w[b] * r * r;
    }
    return s;
  };

  std::vector<LinearFit> candidates;
  const double det = sw * sff - sf * sf;
  if (std::abs(det) > 1e-14 * sw * sff) {
    const double c0 = (sff * sg - sf * sfg) / det;
    const double c1 = (sw * sfg - sf * sg) / det;
    if (c0 >= 0.0 && c1 >= 0.0) candidates.push_back({c0, c1, 0.0});
  }
  if (sff > 0.0) candidates.push_back({0.0, std::max(sfg / sff, 0.0), 0.0});
  candidates.push_back({std::max(sg / sw, 0.0), 0.0, 0.0});
  LinearFit best;
  best.sse = std::numeric_limits<double>::infinity();
  for (auto& c : candidates) {
    c.sse = sse_of(c.nugget, c.partial_sill);
    if (c.sse < best.sse) best = c;
  }
  return best;
}

}  // namespace

VariogramFit fit_variogram(const EmpiricalVariogram& emp, VariogramKind kind) {
  std::vector<double> h, g, w;
  for (std::size_t b = 0; b < emp.pair_counts.size(); ++b) {
    if (emp.pair_counts[b] == 0) continue;
    h.push_back(emp.lags[b]);
    g.push_back(emp.semivariance[b]);
    w.push_back(static_cast<double>(emp.pair_counts[b]));
  }
  if (h.size() < 3)
    throw std::invalid_argument(fmt::format("variogram fit needs at least 3 nonempty bins, got {}", h.size()));

  const double min_lag = std::max(*std::min_element(h.begin(), h.end()), 1e-12);
  const double max_lag = *std::max_element(h.begin(), h.end());
  const auto [gmin, gmax] = std::minmax_element(g.begin(), g.end());

  VariogramFit out;
  out.model.kind = kind;
  if (*gmax - *gmin <= 1e-12 * std::max(1.0, std::abs(*gmax))) {
    const double level = std::max(*gmax, 0.0);
    out.model.nugget = level;
    out.model.sill = std::max(level, kSillFloor);
    out.model.ranges = {min_lag, min_lag, min_lag};
    out.degenerate = true;
    out.warning = "all semivariances are equal; returning a nugget-only model";
    return out;
  }

  // Coarse log-spaced scan over the range, then golden-section refinement around
  // the best grid point.
  const double lo = 0.25 * min_lag;
  const double hi = 10.0 * max_lag;
  constexpr int kGrid = 240;
  std::vector<double> grid(kGrid);
  int best_i = 0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int t = 0; t < kGrid; ++t) {
    grid[t] = lo * std::pow(hi / lo, static_cast<double>(t) / (kGrid - 1));
    const double s = fit_for_range(h, g, w, kind, grid[t]).sse;
    if (s < best_sse) {
      best_sse = s;
      best_i = t;
    }
  }
  double a = std::log(grid[std::max(best_i - 1, 0)]);
  double b = std::log(grid[std::min(best_i + 1, kGrid - 1)]);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto sse_at = [&](double log_r) { return fit_for_range(h, g, w, kind, std::exp(log_r)).sse; };
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = sse_at(c), fd = sse_at(d);
  for (int it = 0; it < 200 && (b - a) > 1e-13; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = sse_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = sse_at(d);
    }
  }
  double range = std::exp(0.5 * (a + b));
  LinearFit fit = fit_for_range(h, g, w, kind, range);
  if (best_sse < fit.sse) {
    range = grid[best_i];
    fit = fit_for_range(h, g, w, kind, range);
  }

  out.model.nugget = fit.nugget;
  out.model.sill = std::max(fit.nugget + fit.partial_sill, kSillFloor);
  out.model.ranges = {range, range, range};
  out.weighted_sse = fit.sse;
  if (fit.partial_sill == 0.0) {
    out.degenerate = true;
    out.warning = "fitted structure has zero partial sill; model is nugget-only";
  }
  return out;
}

EmpiricalVariogram axis_variogram(const Field3& field, int axis, std::size_t n_lags, const CellSize& cell) {
  if (axis < 0 || axis > 2) throw std::invalid_argument(fmt::format("axis must be 0, 1 or 2, got {}", axis));
  const Dims3 d = field.dims();
  const std::size_t extent = d[axis];
  const std::size_t lags = std::min(n_lags, extent - 1);
  if (lags == 0) throw std::invalid_argument(fmt::format("axis {} has a single cell", axis));
  const double step = axis == 0 ? cell.x : axis == 1 ? cell.y : cell.z;
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.i : d.i * d.j;

  EmpiricalVariogram out;
  out.lag_width = step;
  Vec3 dir{0.0, 0.0, 0.0};
  dir[axis] = 1.0;
  out.direction = DirectionFilter{dir, 0.0};
  const auto v = field.values();
  for (std::size_t h = 1; h <= lags; ++h) {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < d.k; ++k)
      for (std::size_t j = 0; j < d.j; ++j)
        for (std::size_t i = 0; i < d.i; ++i) {
          const std::size_t pos = axis == 0 ? i : axis == 1 ? j : k;
          if (pos + h >= extent) continue;
          const std::size_t c = field.offset(i, j, k);
          const double diff = v[c + h * stride] - v[c];
          acc += diff * diff;
          ++count;
        }
    out.lags.push_back(static_cast<double>(h) * step);
    out.semivariance.push_back(acc / (2.0 * static_cast<double>(count)));
    out.pair_counts.push_back(count);
  }
  return out;
}

AxisAlignedFit fit_axis_aligned_variogram(const Field3& field, VariogramKind kind, const CellSize& cell,
                                          std::size_t max_lags) {
  AxisAlignedFit out;
  std::array<double, 3> nuggets{}, sills{}, ranges{};
  for (int a = 0; a < 3; ++a) {
    out.per_axis[a] = fit_variogram(axis_variogram(field, a, max_lags, cell), kind);
    nuggets[a] = out.per_axis[a].model.nugget;
    sills[a] = out.per_axis[a].model.sill;
    ranges[a] = out.per_axis[a].model.ranges[0];
  }
  std::sort(nuggets.begin(), nuggets.end());
  std::sort(sills.begin(), sills.end());
  VariogramModel& m = out.model;
  m.kind = kind;
  m.sill = sills[1];
  m.nugget = std::min(nuggets[1], m.sill);
  if (ranges[1] >= ranges[0]) {
    m.ranges = {ranges[1], ranges[0], ranges[2]};
    m.orientation = {0.0, 0.0};
  } else {
    m.ranges = {ranges[0], ranges[1], ranges[2]};
    m.orientation = {90.0, 0.0};
  }
  return out;
}

void SearchEllipsoid::validate() const {
  for (double r : radii)
    if (!(r > 0.0)) throw std::invalid_argument(fmt::format("search radius {} <= 0", r));
  if (min_neighbors < 1 || min_neighbors > max_neighbors)
    throw std::invalid_argument(
        fmt::format("search neighbors need 1 <= min ({}) <= max ({})", min_neighbors, max_neighbors));
}

namespace {

constexpr double kInsideSlack = 1e-12;

void sort_and_truncate(std::vector<Neighbor>& found, std::size_t max_neighbors) {
  std::sort(found.begin(), found.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.scaled_distance != b.scaled_distance ? a.scaled_distance < b.scaled_distance : a.index < b.index;
  });
  if (found.size() > max_neighbors) found.resize(max_neighbors);
}

}  // namespace

std::vector<Neighbor> select_neighbors(std::span<const SamplePoint> samples, const Vec3& target,
                                       const SearchEllipsoid& ellipsoid, const CellSize& cell) {
  ellipsoid.validate();
  const auto axes = ellipsoid_axes(ellipsoid.orientation);
  std::vector<Neighbor> found;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const double d = scaled_distance(displacement(target, samples[s].position, cell), axes, ellipsoid.radii);
    if (d <= 1.0 + kInsideSlack) found.push_back({s, d});
  }
  sort_and_truncate(found, ellipsoid.max_neighbors);
  return found;
}

NeighborIndex::NeighborIndex(std::span<const SamplePoint> samples, const SearchEllipsoid& ellipsoid,
                             const CellSize& cell)
    : samples_(samples), ellipsoid_(ellipsoid), cell_(cell), axes_(ellipsoid_axes(ellipsoid.orientation)) {
  ellipsoid.validate();
  const Vec3 cs{cell.x, cell.y, cell.z};
  for (int e = 0; e < 3; ++e) {
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) acc += std::pow(ellipsoid.radii[a] * axes_[a][e], 2);
    half_extent_cells_[e] = std::sqrt(acc) / cs[e] * (1.0 + 1e-9);
  }

  Vec3 hi{};
  origin_ = {0, 0, 0};
  if (!samples.empty()) {
    origin_ = hi = samples[0].position;
    for (const auto& s : samples)
      for (int e = 0; e < 3; ++e) {
        origin_[e] = std::min(origin_[e], s.position[e]);
        hi[e] = std::max(hi[e], s.position[e]);
      }
  }
  std::size_t total = 1;
  for (int e = 0; e < 3; ++e) {
    const double span = hi[e] - origin_[e];
    bucket_size_[e] = std::max({half_extent_cells_[e], span / 64.0, 1e-9});
    nbuckets_[e] = static_cast<std::size_t>(span / bucket_size_[e]) + 1;
    total *= nbuckets_[e];
  }

  auto bucket_of = [&](const Vec3& p) {
    std::array<std::size_t, 3> b{};
    for (int e = 0; e < 3; ++e)
      b[e] = std::min(static_cast<std::size_t>((p[e] - origin_[e]) / bucket_size_[e]), nbuckets_[e] - 1);
    return b[0] + nbuckets_[0] * (b[1] + nbuckets_[1] * b[2]);
  };
  bucket_start_.assign(total + 1, 0);
  for (const auto& s : samples) ++bucket_start_[bucket_of(s.position) + 1];
  for (std::size_t b = 0; b < total; ++b) bucket_start_[b + 1] += bucket_start_[b];
  bucket_items_.resize(samples.size());
  std::vector<std::size_t> fill(bucket_start_.begin(), bucket_start_.end() - 1);
  for (std::size_t s = 0; s < samples.size(); ++s) bucket_items_[fill[bucket_of(samples[s].position)]++] = s;
}

std::vector<Neighbor> NeighborIndex::query(const Vec3& target) const {
  std::vector<Neighbor> found;
  if (samples_.empty()) return found;
  std::array<std::size_t, 3> lo{}, hi{};
  for (int e = 0; e < 3; ++e) {
    const double a = (target[e] - half_extent_cells_[e] - origin_[e]) / bucket_size_[e];
    const double b = (target[e] + half_extent_cells_[e] - origin_[e]) / bucket_size_[e];
    if (b < 0.0 || a >= static_cast<double>(nbuckets_[e])) return found;
    lo[e] = a <= 0.0 ? 0 : static_cast<std::size_t>(a);
    hi[e] = std::min(static_cast<std::size_t>(b), nbuckets_[e] - 1);
  }
  for (std::size_t bz = lo[2]; bz <= hi[2]; ++bz)
    for (std::size_t by = lo[1]; by <= hi[1]; ++by)
      for (std::size_t bx = lo[0]; bx <= hi[0]; ++bx) {
        const std::size_t b = bx + nbuckets_[0] * (by + nbuckets_[1] * bz);
        for (std::size_t p = bucket_start_[b]; p < bucket_start_[b + 1]; ++p) {
          const std::size_t s = bucket_items_[p];
          const double d =
              scaled_distance(displacement(target, samples_[s].position, cell_), axes_, ellipsoid_.radii);
          if (d <= 1.0 + kInsideSlack) found.push_back({s, d});
        }
      }
  sort_and_truncate(found, ellipsoid_.max_neighbors);
  return found;
}

namespace {

/// Variogram with its rotation precomputed, for the per-cell inner loops.
struct PreparedModel {
  explicit PreparedModel(const VariogramModel& m) : model(m), axes(ellipsoid_axes(m.orientation)) {}

  [[nodiscard]] double covariance(const Vec3& h) const {
    if (h[0] == 0.0 && h[1] == 0.0 && h[2] == 0.0) return model.sill;
    const double g = model.nugget +
                     (model.sill - model.nugget) * unit_structure(model.kind, scaled_distance(h, axes, model.ranges));
    return model.sill - g;
  }

  VariogramModel model;
  std::array<Vec3, 3> axes;
};

KrigingWeights solve_ok_system(std::span<const SamplePoint> neighbors, const Vec3& target, const PreparedModel& model,
                               const CellSize& cell) {
  const auto n = static_cast<Eigen::Index>(neighbors.size());
  if (n == 0) throw std::invalid_argument("ordinary kriging needs at least one neighbor");
  Eigen::MatrixXd a(n + 1, n + 1);
  Eigen::VectorXd rhs(n + 1);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = r; c < n; ++c)
      a(r, c) = a(c, r) = model.covariance(displacement(neighbors[c].position, neighbors[r].position, cell));
    a(r, n) = a(n, r) = 1.0;
    rhs(r) = model.covariance(displacement(target, neighbors[r].position, cell));
  }
  a(n, n) = 0.0;
  rhs(n) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw std::runtime_error(fmt::format("ordinary kriging system of {} neighbors is singular", n));
  const Eigen::VectorXd sol = lu.solve(rhs);
  KrigingWeights w;
  w.lambda.assign(sol.data(), sol.data() + n);
  w.mu = sol(n);
  return w;
}

}  // namespace

KrigingWeights ordinary_kriging_weights(std::span<const SamplePoint> neighbors, const Vec3& target,
                                        const VariogramModel& model, const CellSize& cell) {
  return solve_ok_system(neighbors, target, PreparedModel(model), cell);
}

std::vector<SamplePoint> deduplicate_samples(std::span<const SamplePoint> samples) {
  std::map<Vec3, std::pair<double, std::size_t>> groups;
  std::vector<Vec3> order;
  for (const auto& s : samples) {
    auto [it, inserted] = groups.try_emplace(s.position, 0.0, 0);
    if (inserted) order.push_back(s.position);
    it->second.first += s.value;
    ++it->second.second;
  }
  std::vector<SamplePoint> out;
  out.reserve(order.size());
  for (const auto& p : order) {
    const auto& [sum, count] = groups.at(p);
    out.push_back({p, count == 1 ? sum : sum / static_cast<double>(count)});
  }
  return out;
}

KrigingResult ordinary_krige(std::span<const SamplePoint> samples_in, const Dims3& grid, const VariogramModel& model,
                             const SearchEllipsoid& ellipsoid, const KrigingOptions& options) {
  if (samples_in.empty()) throw std::invalid_argument("ordinary kriging needs at least one sample");
  model.validate();
  ellipsoid.validate();

  const std::vector<SamplePoint> samples = deduplicate_samples(samples_in);
  double mean = 0.0;
  for (const auto& s : samples_in) mean += s.value;
  mean /= static_cast<double>(samples_in.size());

  KrigingResult out{Field3(grid), Mask3(grid, true), 0, mean};

  // Samples sitting on a grid cell are copied verbatim.
  std::vector<std::ptrdiff_t> sample_at(grid.size(), -1);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto& p = samples[s].position;
    bool on_grid = true;
    std::array<std::size_t, 3> idx{};
    const auto extents = grid.as_array();
    for (int e = 0; e < 3; ++e) {
      if (p[e] < 0.0 || p[e] != std::floor(p[e]) || p[e] >= static_cast<double>(extents[e])) {
        on_grid = false;
        break;
      }
      idx[e] = static_cast<std::size_t>(p[e]);
    }
    if (on_grid) sample_at[out.estimate.offset(idx[0], idx[1], idx[2])] = static_cast<std::ptrdiff_t>(s);
  }

  const NeighborIndex index(samples, ellipsoid, options.cell);
  const PreparedModel prepared(model);
  std::vector<std::size_t> fallback_per_worker(std::max<std::size_t>(options.workers, 1), 0);
  std::vector<std::uint8_t> estimated(grid.size(), 1);

  auto work_slabs = [&](std::size_t worker, std::size_t stride) {
    std::vector<SamplePoint> local;
    for (std::size_t k = worker; k < grid.k; k += stride)
      for (std::size_t j = 0; j < grid.j; ++j)
        for (std::size_t i = 0; i < grid.i; ++i) {
          const std::size_t cell = out.estimate.offset(i, j, k);
          if (sample_at[cell] >= 0) {
            out.estimate[cell] = samples[static_cast<std::size_t>(sample_at[cell])].value;
            continue;
          }
          const Vec3 target{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
          const auto nbrs = index.query(target);
          if (nbrs.size() < ellipsoid.min_neighbors) {
            out.estimate[cell] = mean;
            estimated[cell] = 0;
            ++fallback_per_worker[worker];
            continue;
          }
          local.clear();
          for (const auto& nb : nbrs) local.push_back(samples[nb.index]);
          const KrigingWeights w = solve_ok_system(local, target, prepared, options.cell);
          double pred = 0.0;
          for (std::size_t q = 0; q < local.size(); ++q) pred += w.lambda[q] * local[q].value;
          out.estimate[cell] = pred;
        }
  };

  std::vector<std::exception_ptr> errors(fallback_per_worker.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    try {
      work_slabs(worker, stride);
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  const std::size_t workers = fallback_per_worker.size();
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t c = 0; c < grid.size(); ++c)
    if (!estimated[c]) out.estimated.set(c, false);
  for (auto f : fallback_per_worker) out.fallback_cells += f;
  return out;
}

}  // namespace geoinpaint
