#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace maga {

using Shape = std::vector<std::size_t>;

class Graph;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major f64 tensor. Immutable after construction; copies share the
/// underlying buffer. A tensor may carry a node id of the Graph that produced
/// it, which is how reverse-mode autodiff finds its way back.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Validates size and finiteness; NaN/Inf payloads are rejected.
  static Tensor from_data(Shape shape, std::vector<double> data);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return data_ ? data_->size() : 0; }

  const std::vector<double>& vec() const;
  const double* ptr() const { return vec().data(); }
  double operator[](std::size_t i) const { return vec()[i]; }
  double at2(std::size_t i, std::size_t j) const;
  double at3(std::size_t c, std::size_t i, std::size_t j) const;
  /// Scalar extraction; requires numel() == 1.
  double item() const;

  /// Same values, no graph association.
  Tensor detached() const;

  bool tracked() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Tensor(Shape shape, std::shared_ptr<std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  int node_ = -1;

  friend class Graph;
};

}  // namespace maga
