#pragma once

#include "geoinpaint/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>

namespace geoinpaint::synthetic {

/// Outer product u (x) v (x) w with standard normal entries.
struct Rank1 {
  Field3 field;
  Eigen::VectorXd u, v, w;
};
[[nodiscard]] Rank1 rank1_field(const Dims3& dims, std::uint64_t seed);

/// Tucker tensor with a standard normal core of size `ranks` and standard normal
/// factor matrices, rescaled to unit root-mean-square.
[[nodiscard]] Field3 tucker_field(const Dims3& dims, const std::array<std::size_t, 3>& ranks, std::uint64_t seed);

/// f(i, j, k) = sin(2 pi i / I) * cos(2 pi j / J) * g(k), g stepping through
/// 1.0, -0.5, 2.0 over the lower, middle and upper thirds of k.
[[nodiscard]] Field3 layered_field(const Dims3& dims);

/// Smooth anisotropic random field from a sum of random cosines with Gaussian
/// spectral density, shifted and scaled to porosity-like values in (0, 0.5).
/// Correlation lengths are in cells.
[[nodiscard]] Field3 spectral_field(const Dims3& dims, const std::array<double, 3>& correlation_cells,
                                    std::uint64_t seed, std::size_t n_waves = 256);

/// Exactly round(fraction * size) cells drawn uniformly without replacement.
[[nodiscard]] Mask3 uniform_mask(const Dims3& dims, double fraction, std::uint64_t seed);

}  // namespace geoinpaint::synthetic
