#pragma once

#include "geoinpaint/tensor.hpp"

#include <random>

namespace geoinpaint::testing {

inline Field3 random_field(const Dims3& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Field3 f(dims);
  for (std::size_t n = 0; n < f.size(); ++n) f[n] = normal(rng);
  return f;
}

inline Mask3 random_mask(const Dims3& dims, double fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  Mask3 m(dims);
  for (std::size_t n = 0; n < m.size(); ++n) m.set(n, u(rng) < fraction);
  return m;
}

inline Dims3 random_dims(std::mt19937_64& rng, std::size_t max_extent) {
  std::uniform_int_distribution<std::size_t> d(1, max_extent);
  return {d(rng), d(rng), d(rng)};
}

}  // namespace geoinpaint::testing
