#include "pfda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pfda {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t(Shape{1});
  t.data_[0] = v;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  require(shape_size(shape) == values.size(), ErrorKind::Shape,
          "Tensor::from: payload size " + std::to_string(values.size()) +
              " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
  require(idx.size() == shape_.size(), ErrorKind::Shape,
          "Tensor::at: rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    require(i < shape_[axis], ErrorKind::Bounds,
            "Tensor::at: index " + std::to_string(i) + " out of bounds on axis " +
                std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[offset(idx)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[offset(idx)];
}

double Tensor::item() const {
  require(data_.size() == 1, ErrorKind::Shape, "Tensor::item: size != 1");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace pfda
