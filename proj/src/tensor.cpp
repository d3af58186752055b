#include "flowcast/tensor.hpp"

#include <cmath>
#include <sstream>

#include "flowcast/errors.hpp"

namespace flowcast {

std::string shape_to_string(const Shape& s) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << "x";
    out << s[i];
  }
  out << ")";
  return out.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

namespace {
void validate_shape(const Shape& s) {
  for (std::size_t e : s) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_to_string(s));
  }
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
  validate_shape(shape_);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  validate_shape(shape_);
}

Tensor Tensor::from_vector(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item: tensor " + shape_to_string(shape_) + " is not a scalar");
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(shape_) + " as " +
                     shape_to_string(new_shape));
  }
  return Tensor(std::move(new_shape), data_);
}

}  // namespace flowcast
