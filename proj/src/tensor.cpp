#include "tzlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "tzlab/error.hpp"

namespace tzlab {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config:
      return "config";
    case ErrorKind::Numeric:
      return "numeric";
    case ErrorKind::Io:
      return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values do not fill shape " +
                     shape_to_string(shape_));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("tensor: index of rank " + std::to_string(index.size()) + " used on shape " +
                     shape_to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) {
      throw ShapeError("tensor: index " + std::to_string(i) + " out of range on axis " + std::to_string(axis));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(shape_) + " as " + shape_to_string(shape));
  }
  Tensor out(std::move(shape), data_);
  out.dtype_ = dtype_;
  return out;
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double value) noexcept {
  for (double& v : data_) v = value;
}

bool Tensor::identical(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

ImageDims image_dims(const Shape& shape, const char* op) {
  ImageDims d;
  if (shape.size() == 3) {
    d = {1, shape[0], shape[1], shape[2]};
  } else if (shape.size() == 4) {
    d = {shape[0], shape[1], shape[2], shape[3]};
  } else {
    throw ShapeError(std::string(op) + ": expected [C,H,W] or [B,C,H,W], got " + shape_to_string(shape));
  }
  return d;
}

Shape image_shape(const ImageDims& dims, bool batched) {
  if (batched) return {dims.batch, dims.channels, dims.height, dims.width};
  return {dims.channels, dims.height, dims.width};
}

}  // namespace tzlab
