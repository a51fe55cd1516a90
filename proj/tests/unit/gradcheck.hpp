#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "maskpose/nn/graph.hpp"

namespace testing {

using maskpose::nn::Graph;
using maskpose::nn::Tensor;
using maskpose::nn::Var;

inline Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (double& v : t.values()) v = d(rng);
  return t;
}

/// Largest norm-wise relative error between the graph gradient and central
/// differences of `fn` over all inputs.
inline double gradient_error(const std::function<Var(Graph&, const std::vector<Var>&)>& fn,
                             std::vector<Tensor> inputs, double step = 1e-5) {
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(maskpose::nn::leaf(t));
  Graph g;
  g.backward(fn(g, leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor numeric(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> vars;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          vars.push_back(maskpose::nn::constant(std::move(t)));
        }
        Graph ng(false);
        return fn(ng, vars)->value[0];
      };
      numeric[i] = (eval(step) - eval(-step)) / (2 * step);
    }
    const Tensor& analytic = leaves[k]->grad.size() ? leaves[k]->grad : Tensor(inputs[k].shape());
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace testing
