#include "geoinpaint/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace geoinpaint::synthetic {

namespace {

Eigen::VectorXd normal_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = normal(rng);
  return v;
}

}  // namespace

Rank1 rank1_field(const Dims3& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Rank1 out;
  out.u = normal_vector(dims.i, rng);
  out.v = normal_vector(dims.j, rng);
  out.w = normal_vector(dims.k, rng);
  out.field = Field3(dims);
  for (std::size_t k = 0; k < dims.k; ++k)
    for (std::size_t j = 0; j < dims.j; ++j)
      for (std::size_t i = 0; i < dims.i; ++i)
        out.field(i, j, k) = out.u(static_cast<Eigen::Index>(i)) * out.v(static_cast<Eigen::Index>(j)) *
                             out.w(static_cast<Eigen::Index>(k));
  return out;
}

Field3 tucker_field(const Dims3& dims, const std::array<std::size_t, 3>& ranks, std::uint64_t seed) {
  for (int m = 0; m < 3; ++m)
    if (ranks[m] == 0 || ranks[m] > dims[m])
      throw std::invalid_argument(fmt::format("tucker rank {} invalid for extent {}", ranks[m], dims[m]));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::array<Eigen::MatrixXd, 3> factors;
  for (int m = 0; m < 3; ++m) {
    factors[m].resize(static_cast<Eigen::Index>(dims[m]), static_cast<Eigen::Index>(ranks[m]));
    for (Eigen::Index c = 0; c < factors[m].cols(); ++c)
      for (Eigen::Index r = 0; r < factors[m].rows(); ++r) factors[m](r, c) = normal(rng);
  }
  // core as its mode-0 unfolding, r0 x (r1 * r2)
  Eigen::MatrixXd core(static_cast<Eigen::Index>(ranks[0]), static_cast<Eigen::Index>(ranks[1] * ranks[2]));
  for (Eigen::Index c = 0; c < core.cols(); ++c)
    for (Eigen::Index r = 0; r < core.rows(); ++r) core(r, c) = normal(rng);

  // X_(0) = U0 * G_(0) * (U2 kron U1)^T, with columns ordered j fastest then k.
  const Eigen::MatrixXd a = factors[0] * core;  // I x (r1 r2)
  Field3 out(dims);
  const auto r1 = static_cast<Eigen::Index>(ranks[1]);
  const auto r2 = static_cast<Eigen::Index>(ranks[2]);
  for (std::size_t k = 0; k < dims.k; ++k)
    for (std::size_t j = 0; j < dims.j; ++j)
      for (std::size_t i = 0; i < dims.i; ++i) {
        double s = 0.0;
        for (Eigen::Index c = 0; c < r2; ++c)
          for (Eigen::Index b = 0; b < r1; ++b)
            s += a(static_cast<Eigen::Index>(i), b + r1 * c) * factors[1](static_cast<Eigen::Index>(j), b) *
                 factors[2](static_cast<Eigen::Index>(k), c);
        out(i, j, k) = s;
      }
  const double rms = frobenius_norm(out) / std::sqrt(static_cast<double>(out.size()));
  if (rms > 0.0) out *= 1.0 / rms;
  return out;
}

Field3 layered_field(const Dims3& dims) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  auto level = [&](std::size_t k) {
    const std::size_t third = 3 * k / dims.k;
    return third == 0 ? 1.0 : third == 1 ? -0.5 : 2.0;
  };
  Field3 out(dims);
  for (std::size_t k = 0; k < dims.k; ++k)
    for (std::size_t j = 0; j < dims.j; ++j)
      for (std::size_t i = 0; i < dims.i; ++i)
        out(i, j, k) = std::sin(kTwoPi * static_cast<double>(i) / static_cast<double>(dims.i)) *
                       std::cos(kTwoPi * static_cast<double>(j) / static_cast<double>(dims.j)) * level(k);
  return out;
}

Field3 spectral_field(const Dims3& dims, const std::array<double, 3>& corr, std::uint64_t seed, std::size_t n_waves) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Wave {
    std::array<double, 3> k;
    double phi;
  };
  std::vector<Wave> waves(n_waves);
  for (auto& w : waves) {
    for (int a = 0; a < 3; ++a) w.k[a] = normal(rng) / corr[a];
    w.phi = phase(rng);
  }
  Field3 out(dims);
  const double amp = std::sqrt(2.0 / static_cast<double>(n_waves));
  for (std::size_t k = 0; k < dims.k; ++k)
    for (std::size_t j = 0; j < dims.j; ++j)
      for (std::size_t i = 0; i < dims.i; ++i) {
        double s = 0.0;
        for (const auto& w : waves)
          s += std::cos(w.k[0] * static_cast<double>(i) + w.k[1] * static_cast<double>(j) +
                        w.k[2] * static_cast<double>(k) + w.phi);
        out(i, j, k) = amp * s;
      }
  // unit-variance field mapped to porosity-like values
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = std::clamp(0.2 + 0.07 * out[n], 0.001, 0.5);
  return out;
}

Mask3 uniform_mask(const Dims3& dims, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument(fmt::format("observation fraction {} outside [0, 1]", fraction));
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dims.size())));
  std::vector<std::size_t> cells(dims.size());
  std::iota(cells.begin(), cells.end(), 0);
  std::mt19937_64 rng(seed);
  Mask3 m(dims);
  for (std::size_t t = 0; t < count; ++t) {
    const std::size_t pick = t + static_cast<std::size_t>(rng() % (cells.size() - t));
    std::swap(cells[t], cells[pick]);
    m.set(cells[t], true);
  }
  return m;
}

}  // namespace geoinpaint::synthetic
