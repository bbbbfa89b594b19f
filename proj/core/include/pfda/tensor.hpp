#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "pfda/error.hpp"

namespace pfda {

using Shape = std::vector<std::size_t>;

// Dense row-major array of doubles with a dynamic shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  static Tensor scalar(double v);
  static Tensor from(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; checked, for tests and small tensors.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  // Value of a single-element tensor.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);
  void zero() { fill(0.0); }

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const;

  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

}  // namespace pfda
