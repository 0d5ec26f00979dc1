#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace geoinpaint {

/// Grid extents of a 3-way field. All three counts are strictly positive.
struct Dims3 {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t k = 0;

  Dims3() = default;
  Dims3(std::size_t ni, std::size_t nj, std::size_t nk);

  [[nodiscard]] std::size_t size() const { return i * j * k; }
  [[nodiscard]] std::size_t operator[](int mode) const;
  [[nodiscard]] std::array<std::size_t, 3> as_array() const { return {i, j, k}; }

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Dense real 3-way array. Storage is linear with i varying fastest, then j, then k:
/// offset(i, j, k) = i + I * (j + J * k).
class Field3 {
public:
  Field3() = default;
  explicit Field3(Dims3 dims, double fill = 0.0);
  Field3(Dims3 dims, std::vector<double> values);

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }

  [[nodiscard]] std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims_.i * (j + dims_.j * k);
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) { return values_[offset(i, j, k)]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const { return values_[offset(i, j, k)]; }
  double& operator[](std::size_t n) { return values_[n]; }
  double operator[](std::size_t n) const { return values_[n]; }

  [[nodiscard]] std::span<double> values() { return values_; }
  [[nodiscard]] std::span<const double> values() const { return values_; }

  /// True iff every entry is finite.
  [[nodiscard]] bool all_finite() const;

  Field3& operator+=(const Field3& other);
  Field3& operator-=(const Field3& other);
  Field3& operator*=(double s);

  friend bool operator==(const Field3&, const Field3&) = default;

private:
  Dims3 dims_;
  std::vector<double> values_;
};

Field3 operator+(Field3 a, const Field3& b);
Field3 operator-(Field3 a, const Field3& b);
Field3 operator*(double s, Field3 a);

/// Observed-cell indicator, same linear order as Field3.
class Mask3 {
public:
  Mask3() = default;
  explicit Mask3(Dims3 dims, bool fill = false);
  Mask3(Dims3 dims, std::vector<bool> observed);

  [[nodiscard]] const Dims3& dims() const { return dims_; }
  [[nodiscard]] std::size_t size() const { return observed_.size(); }

  [[nodiscard]] bool operator[](std::size_t n) const { return observed_[n]; }
  [[nodiscard]] bool operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return observed_[i + dims_.i * (j + dims_.j * k)];
  }
  void set(std::size_t n, bool value) { observed_[n] = value; }
  void set(std::size_t i, std::size_t j, std::size_t k, bool value) {
    observed_[i + dims_.i * (j + dims_.j * k)] = value;
  }

  [[nodiscard]] std::size_t count_observed() const;

  friend bool operator==(const Mask3&, const Mask3&) = default;

private:
  Dims3 dims_;
  std::vector<bool> observed_;
};

/// Mode-n unfolding X_(n). Rows index mode n; columns enumerate the two remaining
/// modes with the lower-numbered one varying fastest:
///   mode 0: col = j + J*k,  mode 1: col = i + I*k,  mode 2: col = i + I*j.
struct Unfolding {
  int mode = 0;
  Eigen::MatrixXd matrix;

  [[nodiscard]] Eigen::Index rows() const { return matrix.rows(); }
  [[nodiscard]] Eigen::Index cols() const { return matrix.cols(); }
};

[[nodiscard]] Unfolding unfold(const Field3& field, int mode);
[[nodiscard]] Field3 fold(const Unfolding& unfolding, Dims3 dims);

/// P_Omega: observed entries kept, everything else exactly zero.
[[nodiscard]] Field3 project(const Field3& field, const Mask3& mask);
/// Complementary projection onto unobserved entries.
[[nodiscard]] Field3 project_complement(const Field3& field, const Mask3& mask);

[[nodiscard]] double frobenius_norm(const Field3& field);

/// Ratio ||P_perp(reconstruction) - P_perp(truth)||_F / ||P_perp(truth)||_F over
/// unobserved cells. Named "relative squared error" by convention though it is a
/// norm ratio.
[[nodiscard]] double rse(const Field3& reconstruction, const Field3& truth, const Mask3& mask);

}  // namespace geoinpaint
