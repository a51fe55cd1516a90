#include "maskpose/nn/tensor.hpp"

#include <algorithm>

#include "maskpose/errors.hpp"

namespace maskpose::nn {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidArgument("tensor shape has a negative dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

Tensor::Tensor(std::vector<int> shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), Storage(values)) {}

Tensor::Tensor(std::vector<int> shape, Storage values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw InvalidArgument("tensor " + shape_string() + " given " + std::to_string(data_.size()) +
                          " values");
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || !grad.same_shape(value)) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Tensor value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

}  // namespace maskpose::nn
