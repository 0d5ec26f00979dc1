#include "geoinpaint/tensor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace geoinpaint {

Dims3::Dims3(std::size_t ni, std::size_t nj, std::size_t nk) : i(ni), j(nj), k(nk) {
  if (ni == 0 || nj == 0 || nk == 0)
    throw std::invalid_argument(fmt::format("Dims3: extents must be positive, got {}x{}x{}", ni, nj, nk));
}

std::size_t Dims3::operator[](int mode) const {
  switch (mode) {
    case 0: return i;
    case 1: return j;
    case 2: return k;
    default: throw std::invalid_argument(fmt::format("invalid mode {}", mode));
  }
}

Field3::Field3(Dims3 dims, double fill) : dims_(dims), values_(dims.size(), fill) {}

Field3::Field3(Dims3 dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != dims_.size())
    throw std::invalid_argument(
        fmt::format("Field3: {} values for dims {}x{}x{}", values_.size(), dims_.i, dims_.j, dims_.k));
}

bool Field3::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

namespace {
void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (!(a == b))
    throw std::invalid_argument(
        fmt::format("{}: dims mismatch {}x{}x{} vs {}x{}x{}", what, a.i, a.j, a.k, b.i, b.j, b.k));
}
}  // namespace

Field3& Field3::operator+=(const Field3& other) {
  require_same_dims(dims_, other.dims_, "Field3 +=");
  for (std::size_t n = 0; n < values_.size(); ++n) values_[n] += other.values_[n];
  return *this;
}

Field3& Field3::operator-=(const Field3& other) {
  require_same_dims(dims_, other.dims_, "Field3 -=");
  for (std::size_t n = 0; n < values_.size(); ++n) values_[n] -= other.values_[n];
  return *this;
}

Field3& Field3::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

Field3 operator+(Field3 a, const Field3& b) { return a += b; }
Field3 operator-(Field3 a, const Field3& b) { return a -= b; }
Field3 operator*(double s, Field3 a) { return a *= s; }

Mask3::Mask3(Dims3 dims, bool fill) : dims_(dims), observed_(dims.size(), fill) {}

Mask3::Mask3(Dims3 dims, std::vector<bool> observed) : dims_(dims), observed_(std::move(observed)) {
  if (observed_.size() != dims_.size())
    throw std::invalid_argument(fmt::format("Mask3: {} flags for {} cells", observed_.size(), dims_.size()));
}

std::size_t Mask3::count_observed() const {
  return static_cast<std::size_t>(std::count(observed_.begin(), observed_.end(), true));
}

Unfolding unfold(const Field3& field, int mode) {
  const Dims3& d = field.dims();
  const auto n = static_cast<Eigen::Index>(d[mode]);  // throws on bad mode
  const auto cols = static_cast<Eigen::Index>(d.size()) / n;
  const auto src = field.values();
  Unfolding out{mode, Eigen::MatrixXd(n, cols)};
  switch (mode) {
    case 0:
      // storage is already I x (J*K) column-major
      out.matrix = Eigen::Map<const Eigen::MatrixXd>(src.data(), n, cols);
      break;
    case 1:
      for (std::size_t k = 0; k < d.k; ++k)
        for (std::size_t j = 0; j < d.j; ++j)
          for (std::size_t i = 0; i < d.i; ++i)
            out.matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i + d.i * k)) = src[field.offset(i, j, k)];
      break;
    case 2:
      // storage is (I*J) x K column-major; the unfolding is its transpose
      out.matrix = Eigen::Map<const Eigen::MatrixXd>(src.data(), cols, n).transpose();
      break;
  }
  return out;
}

Field3 fold(const Unfolding& unfolding, Dims3 dims) {
  const int mode = unfolding.mode;
  const auto n = static_cast<Eigen::Index>(dims[mode]);
  const auto cols = static_cast<Eigen::Index>(dims.size()) / n;
  if (unfolding.rows() != n || unfolding.cols() != cols)
    throw std::invalid_argument(fmt::format("fold: mode-{} unfolding is {}x{}, dims require {}x{}", mode,
                                            unfolding.rows(), unfolding.cols(), n, cols));
  Field3 out(dims);
  auto dst = out.values();
  switch (mode) {
    case 0:
      Eigen::Map<Eigen::MatrixXd>(dst.data(), n, cols) = unfolding.matrix;
      break;
    case 1:
      for (std::size_t k = 0; k < dims.k; ++k)
        for (std::size_t j = 0; j < dims.j; ++j)
          for (std::size_t i = 0; i < dims.i; ++i)
            dst[out.offset(i, j, k)] =
                unfolding.matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i + dims.i * k));
      break;
    case 2:
      Eigen::Map<Eigen::MatrixXd>(dst.data(), cols, n) = unfolding.matrix.transpose();
      break;
  }
  return out;
}

Field3 project(const Field3& field, const Mask3& mask) {
  require_same_dims(field.dims(), mask.dims(), "project");
  Field3 out(field.dims());
  for (std::size_t n = 0; n < field.size(); ++n)
    if (mask[n]) out[n] = field[n];
  return out;
}

Field3 project_complement(const Field3& field, const Mask3& mask) {
  require_same_dims(field.dims(), mask.dims(), "project_complement");
  Field3 out(field.dims());
  for (std::size_t n = 0; n < field.size(); ++n)
    if (!mask[n]) out[n] = field[n];
  return out;
}

double frobenius_norm(const Field3& field) {
  const auto v = field.values();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).norm();
}

double rse(const Field3& reconstruction, const Field3& truth, const Mask3& mask) {
  require_same_dims(reconstruction.dims(), truth.dims(), "rse");
  require_same_dims(truth.dims(), mask.dims(), "rse");
  double num = 0.0;
  double den = 0.0;
  std::size_t unobserved = 0;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    if (mask[n]) continue;
    ++unobserved;
    const double e = reconstruction[n] - truth[n];
    num += e * e;
    den += truth[n] * truth[n];
  }
  if (unobserved == 0) throw std::invalid_argument("rse: no unobserved cells");
  if (den == 0.0) throw std::invalid_argument("rse: unobserved ground truth is identically zero");
  return std::sqrt(num) / std::sqrt(den);
}

}  // namespace geoinpaint
