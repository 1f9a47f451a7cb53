#include "tensor.hpp"

#include <cmath>
#include <numeric>

namespace msnas {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative extent in shape " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

Tensor Tensor::vector(std::span<const double> values) {
  return Tensor({1, static_cast<int>(values.size()), 1, 1},
                std::vector<double>(values.begin(), values.end()));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape_.str());
  }
  return data_[0];
}

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::accumulate(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "accumulate");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
  }
}

}  // namespace msnas
