#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tzlab {

using Shape = std::vector<std::size_t>;

/// Storage precision used when a tensor is serialized. Arithmetic is always
/// carried out in double precision.
enum class DType { f32, f64 };

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major N-dimensional array of reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  DType dtype() const noexcept { return dtype_; }
  void set_dtype(DType dtype) noexcept { dtype_ = dtype; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;
  void fill(double value) noexcept;

  /// Bitwise equality of shape and values.
  bool identical(const Tensor& other) const noexcept;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::f64;
};

/// Elementwise maximum absolute difference. Shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Frobenius norm of all elements.
double frobenius_norm(const Tensor& t);

/// Helper for the four-axis [B, C, H, W] view used by image operations; a
/// rank-3 tensor [C, H, W] is read as batch one.
struct ImageDims {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const noexcept { return height * width; }
};

ImageDims image_dims(const Shape& shape, const char* op);
Shape image_shape(const ImageDims& dims, bool batched);

}  // namespace tzlab
