#pragma once

#include "geoinpaint/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geoinpaint {

using Vec3 = std::array<double, 3>;

/// Physical size of one cell along x, y, z. Positions are stored in cell-index
/// coordinates and multiplied by this before any distance is measured, so ranges
/// and radii are in physical units (feet for SPE10).
struct CellSize {
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  [[nodiscard]] Vec3 to_physical(const Vec3& cells) const { return {cells[0] * x, cells[1] * y, cells[2] * z}; }
};

struct SamplePoint {
  Vec3 position{};  ///< cell-index coordinates
  double value = 0.0;
};

/// Orientation of an anisotropic ellipsoid. Azimuth is measured in degrees clockwise
/// from +y in the x-y plane and names the major axis; dip tilts the major axis
/// out of that plane. The minor axis stays horizontal.
struct Orientation {
  double azimuth_deg = 0.0;
  double dip_deg = 0.0;
};

/// Rows are the unit major, minor and vertical axes.
[[nodiscard]] std::array<Vec3, 3> ellipsoid_axes(const Orientation& o);

/// Norm of `h` after projecting onto the ellipsoid axes and dividing by the radii.
[[nodiscard]] double scaled_distance(const Vec3& h, const std::array<Vec3, 3>& axes, const Vec3& radii);

enum class VariogramKind { spherical, exponential, gaussian };

[[nodiscard]] std::string to_string(VariogramKind kind);
[[nodiscard]] VariogramKind variogram_kind_from_string(const std::string& name);

/// Unit-sill, unit-range structure function; exponential and gaussian use the
/// practical-range convention (95% of the sill at scaled distance 1).
[[nodiscard]] double unit_structure(VariogramKind kind, double scaled_h);

/// Stationary variogram gamma(h) = nugget + (sill - nugget) * f(|h|_scaled) for h != 0
/// and gamma(0) = 0. Covariance C(h) = sill - gamma(h).
struct VariogramModel {
  VariogramKind kind = VariogramKind::spherical;
  double nugget = 0.0;
  double sill = 1.0;
  Vec3 ranges{1.0, 1.0, 1.0};  ///< major, minor, vertical
  Orientation orientation{};

  static VariogramModel isotropic(VariogramKind kind, double nugget, double sill, double range) {
    return {kind, nugget, sill, {range, range, range}, {}};
  }

  void validate() const;
  /// h is a physical displacement.
  [[nodiscard]] double gamma(const Vec3& h) const;
  [[nodiscard]] double covariance(const Vec3& h) const { return sill - gamma(h); }
};

[[nodiscard]] double covariance(const VariogramModel& model, const Vec3& h);

struct DirectionFilter {
  Vec3 direction{1.0, 0.0, 0.0};
  double tolerance_deg = 22.5;
};

struct PairSampling {
  std::size_t max_pairs = 2'000'000;
  std::uint64_t seed = 0;
};

struct EmpiricalVariogram {
  std::vector<double> lags;         ///< mean pair distance per bin, bin midpoint when empty
  std::vector<double> semivariance; ///< 0 for empty bins
  std::vector<std::size_t> pair_counts;
  double lag_width = 0.0;
  std::optional<DirectionFilter> direction;

  [[nodiscard]] std::size_t nonempty_bins() const;
};

/// Method-of-moments estimator, gamma(h) = sum (z_i - z_j)^2 / (2 N(h)), over bins
/// [b * w, (b + 1) * w). All pairs are used when there are at most
/// sampling.max_pairs of them, otherwise that many pairs are drawn at random.
[[nodiscard]] EmpiricalVariogram empirical_variogram(std::span<const SamplePoint> samples, double lag_width,
                                                     std::size_t n_lags,
                                                     const std::optional<DirectionFilter>& direction = std::nullopt,
                                                     const CellSize& cell = {}, const PairSampling& sampling = {});

struct VariogramFit {
  VariogramModel model;
  double weighted_sse = 0.0;
  bool degenerate = false;
  std::string warning;
};

/// Weighted least squares over (nugget, sill, range), weights = pair counts. The
/// returned model is isotropic.
[[nodiscard]] VariogramFit fit_variogram(const EmpiricalVariogram& emp, VariogramKind kind);

/// Semivariance of a fully known field along one grid axis (0 = x, 1 = y, 2 = z) at
/// lags of 1..n_lags cells, using every cell pair at that offset. Lags are physical.
[[nodiscard]] EmpiricalVariogram axis_variogram(const Field3& field, int axis, std::size_t n_lags,
                                                const CellSize& cell = {});

struct AxisAlignedFit {
  VariogramModel model;
  std::array<VariogramFit, 3> per_axis;  ///< x, y, z
};

/// Fits each axis variogram separately and combines them: nugget and sill are the
/// medians over axes, ranges come from each axis, and the major axis is whichever
/// lateral axis has the longer range (azimuth 0 for y, 90 for x).
[[nodiscard]] AxisAlignedFit fit_axis_aligned_variogram(const Field3& field, VariogramKind kind,
                                                        const CellSize& cell = {}, std::size_t max_lags = 40);

struct SearchEllipsoid {
  Vec3 radii{1.0, 1.0, 1.0};  ///< major, minor, vertical (physical units)
  Orientation orientation{};
  std::size_t max_neighbors = 16;
  std::size_t min_neighbors = 1;

  void validate() const;
};

struct Neighbor {
  std::size_t index = 0;  ///< into the sample list
  double scaled_distance = 0.0;
};

/// Samples within the ellipsoid around `target`, nearest first (ties by index),
/// truncated at max_neighbors. Brute force over all samples.
[[nodiscard]] std::vector<Neighbor> select_neighbors(std::span<const SamplePoint> samples, const Vec3& target,
                                                     const SearchEllipsoid& ellipsoid, const CellSize& cell = {});

/// Bucketed lookup returning exactly what select_neighbors returns.
class NeighborIndex {
public:
  NeighborIndex(std::span<const SamplePoint> samples, const SearchEllipsoid& ellipsoid, const CellSize& cell);

  [[nodiscard]] std::vector<Neighbor> query(const Vec3& target) const;

private:
  std::span<const SamplePoint> samples_;
  SearchEllipsoid ellipsoid_;
  CellSize cell_;
  std::array<Vec3, 3> axes_{};
  Vec3 half_extent_cells_{};  // bounding box of the ellipsoid, in cells
  Vec3 origin_{};
  Vec3 bucket_size_{};
  std::array<std::size_t, 3> nbuckets_{};
  std::vector<std::size_t> bucket_start_;
  std::vector<std::size_t> bucket_items_;
};

struct KrigingWeights {
  std::vector<double> lambda;
  double mu = 0.0;  ///< Lagrange multiplier of the unbiasedness constraint
};

/// Ordinary kriging weights for one target: [C 1; 1^T 0][lambda; mu] = [c0; 1].
[[nodiscard]] KrigingWeights ordinary_kriging_weights(std::span<const SamplePoint> neighbors, const Vec3& target,
                                                      const VariogramModel& model, const CellSize& cell = {});

/// Collapses samples at identical positions into one sample holding their mean.
[[nodiscard]] std::vector<SamplePoint> deduplicate_samples(std::span<const SamplePoint> samples);

struct KrigingResult {
  Field3 estimate;
  Mask3 estimated;  ///< true where the cell was sampled or kriged, false for mean fallback
  std::size_t fallback_cells = 0;
  double sample_mean = 0.0;
};

struct KrigingOptions {
  CellSize cell{};
  std::size_t workers = 1;
};

/// Grid-wide ordinary kriging. Cells holding a sample copy it verbatim; cells with
/// fewer than min_neighbors samples in the ellipsoid get the global sample mean.
[[nodiscard]] KrigingResult ordinary_krige(std::span<const SamplePoint> samples, const Dims3& grid,
                                           const VariogramModel& model, const SearchEllipsoid& ellipsoid,
                                           const KrigingOptions& options = {});

}  // namespace geoinpaint
