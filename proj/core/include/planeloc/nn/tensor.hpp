#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace planeloc::nn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  /// Throws ShapeMismatch when values.size() != product of shape.
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  void fill(double v);
  /// Same values under a new shape of equal size. Throws ShapeMismatch.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// A trainable tensor paired with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.fill(0.0); }
};

}  // namespace planeloc::nn
