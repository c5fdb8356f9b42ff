#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dcasr::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Dense row-major float64 array. Rank-1 tensors behave as a single row when
// viewed through rows()/cols().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  bool all_finite() const noexcept;
  void fill(double v);

  // Bitwise comparison of shape and payload.
  bool bit_equal(const Tensor& other) const noexcept;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

std::size_t element_count(const Shape& shape);

// out = x * W + b, with x [n x a], W [a x b], b [b].
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Plain matrix product of two rank-2 (or rank-1 row) tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace dcasr::nn
