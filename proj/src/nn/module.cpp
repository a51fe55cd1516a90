#include "maskpose/nn/module.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <cstring>
#include <fstream>

#include "maskpose/errors.hpp"

namespace maskpose::nn {
namespace {

constexpr char kMagic[8] = {'M', 'P', 'C', 'K', 'P', 'T', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;

Tensor he_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw ParseError(what + ": truncated");
  return value;
}

}  // namespace

Var ParameterSet::add(const std::string& name, Tensor init) {
  for (const auto& [n, v] : entries_) {
    if (n == name) throw InvalidArgument("duplicate parameter name: " + name);
  }
  Var v = leaf(std::move(init));
  entries_.emplace_back(name, v);
  return v;
}

const Var& ParameterSet::at(const std::string& name) const {
  for (const auto& [n, v] : entries_) {
    if (n == name) return v;
  }
  throw InvalidArgument("unknown parameter: " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second->grad = Tensor();
}

void ParameterSet::quantize_to_float() {
  for (auto& e : entries_) {
    for (double& v : e.second->value.values()) v = static_cast<double>(static_cast<float>(v));
  }
}

void ParameterSet::load(const Checkpoint& checkpoint) {
  for (auto& [name, var] : entries_) {
    const Tensor* found = nullptr;
    for (const auto& [n, t] : checkpoint.tensors) {
      if (n == name) found = &t;
    }
    if (found == nullptr) throw ParseError("checkpoint is missing parameter " + name);
    if (!found->same_shape(var->value)) {
      throw ParseError("checkpoint parameter " + name + " has shape " + found->shape_string() +
                       ", expected " + var->value.shape_string());
    }
    var->value = *found;
  }
}

Conv2d make_conv2d(ParameterSet& params, const std::string& name, int in, int out, int kernel,
                   std::mt19937_64& rng, bool zero) {
  Tensor w = zero ? Tensor({out, in, kernel, kernel})
                  : he_uniform({out, in, kernel, kernel}, in * kernel * kernel, rng);
  return {params.add(name + ".weight", std::move(w)), params.add(name + ".bias", Tensor({out}))};
}

Dense make_dense(ParameterSet& params, const std::string& name, int in, int out,
                 std::mt19937_64& rng, bool zero) {
  Tensor w = zero ? Tensor({out, in}) : he_uniform({out, in}, in, rng);
  return {params.add(name + ".weight", std::move(w)), params.add(name + ".bias", Tensor({out}))};
}

double grad_norm(const ParameterSet& params) {
  double s = 0.0;
  for (const auto& e : params.entries()) {
    for (double g : e.second->grad.values()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParameterSet& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& e : params.entries()) {
      for (double& g : e.second->grad.values()) g *= f;
    }
  }
  return norm;
}

void OptimizerConfig::validate() const {
  if (kind != "sgd" && kind != "adam") throw InvalidArgument("optimizer must be sgd or adam, got " + kind);
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw InvalidArgument("momentum must be in [0, 1)");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw InvalidArgument("adam betas must be in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw InvalidArgument("final_lr_fraction must be in (0, 1]");
  }
}

nlohmann::json optimizer_to_json(const OptimizerConfig& c) {
  return {{"kind", c.kind},   {"learning_rate", c.learning_rate}, {"momentum", c.momentum},
          {"beta1", c.beta1}, {"beta2", c.beta2},                 {"epsilon", c.epsilon},
          {"clip_norm", c.clip_norm}, {"final_lr_fraction", c.final_lr_fraction}};
}

OptimizerConfig optimizer_from_json(const nlohmann::json& j, OptimizerConfig c) {
  c.kind = j.value("kind", c.kind);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.final_lr_fraction = j.value("final_lr_fraction", c.final_lr_fraction);
  c.validate();
  return c;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(std::move(config)), lr_(config_.learning_rate) {
  config_.validate();
}

void Optimizer::set_epoch(int epoch, int epochs) {
  const double progress = epochs > 1 ? static_cast<double>(epoch) / (epochs - 1) : 0.0;
  const double f = config_.final_lr_fraction;
  lr_ = config_.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void Optimizer::step(ParameterSet& params) {
  const auto& entries = params.entries();
  if (first_.empty()) {
    for (const auto& e : entries) {
      first_.emplace_back(e.second->value.size(), 0.0);
      if (config_.kind == "adam") second_.emplace_back(e.second->value.size(), 0.0);
    }
  }
  if (first_.size() != entries.size()) throw InvalidArgument("optimizer used with a different parameter set");
  if (config_.clip_norm > 0.0) clip_grad_norm(params, config_.clip_norm);
  ++steps_;
  const double lr = lr_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    Node& node = *entries[p].second;
    if (node.grad.size() == 0) continue;
    std::vector<double>& m = first_[p];
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const double g = node.grad[i];
      if (config_.kind == "sgd") {
        m[i] = config_.momentum * m[i] + g;
        node.value[i] -= lr * m[i];
      } else {
        double& v = second_[p][i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
        node.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v / bc2) + config_.epsilon);
      }
    }
  }
  params.zero_grad();
}

void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const ParameterSet& params) {
  nlohmann::json listing = nlohmann::json::array();
  for (const auto& [name, var] : params.entries()) {
    listing.push_back({{"name", name}, {"shape", var->value.shape()}});
  }
  header["tensors"] = std::move(listing);
  const std::string text = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InvalidArgument("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(os, kVersion);
  write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : params.entries()) {
    for (double v : e.second->value.values()) write_le<float>(os, static_cast<float>(v));
  }
  if (!os) throw InvalidArgument("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingPrerequisite("checkpoint not found: " + path.string());
  std::ifstream is(path, std::ios::binary);
  const std::string where = "checkpoint " + path.string();
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(where + ": bad magic");
  }
  const auto version = read_le<std::uint32_t>(is, where);
  if (version != kVersion) throw ParseError(where + ": unsupported version " + std::to_string(version));
  const auto size = read_le<std::uint64_t>(is, where);
  if (size > (1ULL << 30)) throw ParseError(where + ": header too large");
  std::string text(size, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(size))) throw ParseError(where + ": truncated header");
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
    for (const auto& t : ck.header.at("tensors")) {
      std::vector<int> shape = t.at("shape").get<std::vector<int>>();
      Tensor tensor(shape);
      for (double& v : tensor.values()) v = static_cast<double>(read_le<float>(is, where));
      ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": malformed header: " + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError(where + ": trailing bytes");
  return ck;
}

}  // namespace maskpose::nn
