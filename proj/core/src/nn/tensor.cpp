#include "planeloc/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "planeloc/error.hpp"

namespace planeloc::nn {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
  for (int d : shape_) {
    if (d < 0) fail(ErrorKind::ShapeMismatch, "negative tensor dimension");
  }
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    fail(ErrorKind::ShapeMismatch, "value count does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != values_.size()) {
    fail(ErrorKind::ShapeMismatch,
         "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace planeloc::nn
