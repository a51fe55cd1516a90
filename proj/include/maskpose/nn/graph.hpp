#pragma once

#include <functional>
#include <span>
#include <vector>

#include "maskpose/nn/tensor.hpp"

namespace maskpose::nn {

/// Records operations in creation order and replays them backwards.
///
/// Feature maps are [C, H, W]; per-point features are [C, N] with one column
/// per point. A graph built with record = false keeps no closures and is
/// meant for inference.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  /// Stride-1 convolution with zero "same" padding. weight [O, C, k, k], k odd.
  Var conv2d(const Var& x, const Var& weight, const Var& bias);
  /// Shared per-column linear map: [C, N] -> [O, N] with weight [O, C].
  Var pointwise(const Var& x, const Var& weight, const Var& bias);
  /// 2×2 mean pooling, H and W must be even.
  Var avg_pool2(const Var& x);
  /// 2× nearest-neighbor upsampling.
  Var upsample2(const Var& x);

  Var add(const Var& a, const Var& b);
  /// x + c for a fixed tensor c of the same shape.
  Var add_constant(const Var& x, const Tensor& c);
  Var scale(const Var& x, double factor);
  /// x * sigmoid(x)
  Var silu(const Var& x);
  Var sigmoid(const Var& x);

  /// Concatenation along the first axis; trailing sizes must agree.
  Var concat(const std::vector<Var>& parts);
  /// [C, H, W] -> [C, N] selecting flat pixel indices.
  Var gather_columns(const Var& map, std::span<const int> flat_indices);
  /// Column-wise max: [C, N] -> [C, 1]. Ties go to the lowest column.
  Var max_columns(const Var& x);
  /// [C, 1] -> [C, N]
  Var repeat_columns(const Var& x, int n);
  /// Rows [begin, end) of a [C, ...] tensor.
  Var slice_rows(const Var& x, int begin, int end);
  Var mean(const Var& x);
  Var sum(const std::vector<Var>& scalars);

  /// Mean over pixels of -log softmax(scores[:, p])[labels[p]] for scores of
  /// shape [C, H, W] (or [C, P]) and one label per pixel.
  Var softmax_cross_entropy(const Var& scores, std::span<const int> labels);

  /// Registers an op whose gradient is computed by `backward`. The callback
  /// receives the output gradient and accumulates into inputs' grad buffers.
  Var custom(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 for a single-element root and runs the tape.
  void backward(const Var& root);

 private:
  Var make_output(Tensor value, std::initializer_list<const Var*> inputs);
  void record(const Var& out, BackwardFn fn);

  bool record_;
  std::vector<std::function<void()>> tape_;
};

}  // namespace maskpose::nn
