#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace msnas {

// Raised whenever two operands disagree on shape or a shape violates an
// operation precondition.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense NCHW array of doubles, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }
  static Tensor vector(std::span<const double> values);

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  const double& at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }

  double item() const;
  double sum() const;
  bool all_finite() const;
  void fill(double v);
  // this += other (same shape).
  void accumulate(const Tensor& other);

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace msnas
