#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace maskpose::nn {

/// Every buffer starts on the same alignment boundary, so vectorized Eigen
/// kernels split their work identically and results do not depend on where
/// the allocator placed the data.
using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0);
  Tensor(std::vector<int> shape, const std::vector<double>& values);
  Tensor(std::vector<int> shape, Storage values);
  Tensor(std::vector<int> shape, std::initializer_list<double> values);

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

 private:
  std::vector<int> shape_;
  Storage data_;
};

std::size_t shape_size(const std::vector<int>& shape);

/// A value in a computation, optionally carrying a gradient.
struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches the node
  bool requires_grad = false;

  /// Allocates a zero gradient of the value's shape if missing.
  Tensor& grad_buffer();
};

using Var = std::shared_ptr<Node>;

/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Leaf that accumulates gradients (parameters, or inputs under test).
Var leaf(Tensor value);

}  // namespace maskpose::nn
