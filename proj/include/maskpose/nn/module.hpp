#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskpose/nn/graph.hpp"

namespace maskpose::nn {

struct Checkpoint;

/// Named trainable tensors in registration order.
class ParameterSet {
 public:
  Var add(const std::string& name, Tensor init);
  const Var& at(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Rounds every value to the nearest float so a saved checkpoint reloads bitwise.
  void quantize_to_float();
  /// Copies tensors by name. Throws ParseError on a missing name or shape mismatch.
  void load(const Checkpoint& checkpoint);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
};

/// Stride-1 "same" convolution.
struct Conv2d {
  Var weight;
  Var bias;
  Var operator()(Graph& g, const Var& x) const { return g.conv2d(x, weight, bias); }
};

/// Shared per-column linear layer over [C, N] features.
struct Dense {
  Var weight;
  Var bias;
  Var operator()(Graph& g, const Var& x) const { return g.pointwise(x, weight, bias); }
};

/// He-uniform weights and zero bias; `zero` makes both zero.
Conv2d make_conv2d(ParameterSet& params, const std::string& name, int in, int out, int kernel,
                   std::mt19937_64& rng, bool zero = false);
Dense make_dense(ParameterSet& params, const std::string& name, int in, int out,
                 std::mt19937_64& rng, bool zero = false);

/// Euclidean norm of all gradients.
double grad_norm(const ParameterSet& params);
/// Rescales gradients so their joint norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(ParameterSet& params, double max_norm);

struct OptimizerConfig {
  std::string kind = "sgd";  // "sgd" or "adam"
  double learning_rate = 0.01;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Gradient norm clip, disabled when <= 0.
  double clip_norm = 0.0;
  /// Cosine decay from learning_rate to learning_rate * final_lr_fraction
  /// over the training epochs; 1 keeps the rate constant.
  double final_lr_fraction = 1.0;

  void validate() const;
};

nlohmann::json optimizer_to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_from_json(const nlohmann::json& json, OptimizerConfig defaults);

/// Applies one update from the accumulated gradients, then zeroes them.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);
  void step(ParameterSet& params);
  const OptimizerConfig& config() const { return config_; }
  /// Sets the rate used by later steps from the cosine schedule.
  void set_epoch(int epoch, int epochs);
  double learning_rate() const { return lr_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::int64_t steps_ = 0;
  double lr_ = 0.0;
};

/// Binary container: 8-byte magic, u32 version, u64 header size, JSON header,
/// then little-endian float32 blocks in the order listed under header["tensors"].
struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const ParameterSet& params);
/// Throws MissingPrerequisite when the file is absent, ParseError when malformed.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace maskpose::nn
