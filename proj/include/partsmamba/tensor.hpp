#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace partsmamba {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

/// Raised when operand extents do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation produces or receives non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of reals.
///
/// Storage is always double precision; reduced-precision parameters are
/// represented by values rounded to float (see `round_to_float`).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
  static Tensor normal(Shape shape, double stddev, Rng& rng);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;
  void fill(double v);
  void round_to_float();

  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(Tensor a, double s);

/// Maximum of |a-b| / max(|a|, |b|, floor) over all entries.
double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-12);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_identical(const Tensor& a, const Tensor& b);

void require_shape(const Tensor& t, const Shape& expected, const char* what);

}  // namespace partsmamba
