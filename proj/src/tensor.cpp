#include "maga/tensor.hpp"

#include <cmath>
#include <sstream>

namespace maga {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

static void check_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape) {
  check_shape(shape);
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("tensor: non-finite fill value");
  check_shape(shape);
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(n, value));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  for (double v : data) {
    if (!std::isfinite(v)) throw std::invalid_argument("tensor: non-finite value in payload");
  }
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(std::move(data)));
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::invalid_argument("tensor: axis out of range");
  return shape_[axis];
}

const std::vector<double>& Tensor::vec() const {
  if (!data_) throw std::logic_error("tensor: use of undefined tensor");
  return *data_;
}

double Tensor::at2(std::size_t i, std::size_t j) const {
  return vec()[i * shape_[1] + j];
}

double Tensor::at3(std::size_t c, std::size_t i, std::size_t j) const {
  return vec()[(c * shape_[1] + i) * shape_[2] + j];
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(shape_));
  return vec()[0];
}

Tensor Tensor::detached() const {
  Tensor t(shape_, data_);
  return t;
}

}  // namespace maga
