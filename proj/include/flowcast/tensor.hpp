#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace flowcast {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense N-dimensional array of doubles in row-major order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, double fill);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor from_vector(std::vector<double> v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t dim) const { return shape_[dim]; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Scalar extraction; throws ShapeError unless the tensor has exactly one entry.
  double item() const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor reshaped(Shape new_shape) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace flowcast
