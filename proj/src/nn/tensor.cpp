#include "dcasr/nn/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dcasr/error.hpp"

namespace dcasr::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  values_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  if (values_.size() != element_count(shape_)) {
    throw DimensionError("value count " + std::to_string(values_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 0;
  if (shape_.size() == 1) return 1;
  return values_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (auto& x : values_) x = v;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ && values_.size() == other.values_.size() &&
         (values_.empty() || std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows() || b.rank() != 2) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out.values().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      const double* br = b.values().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.cols() != weight.rows() || bias.size() != weight.cols()) {
    throw DimensionError("affine shape mismatch: x " + shape_string(x.shape()) + ", W " +
                         shape_string(weight.shape()) + ", b " + shape_string(bias.shape()));
  }
  Tensor out = matmul(x, weight);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return out;
}

}  // namespace dcasr::nn
