#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gman/tensor.hpp"

namespace gman {

/// Owns the trainable tensors of a model. Names are unique; each tensor is
/// registered exactly once.
class ParameterRegistry {
 public:
  explicit ParameterRegistry(std::uint64_t seed = 0) : rng_(seed) {}

  /// Weight matrix in×out drawn uniformly in ±sqrt(6 / (in + out)).
  Tensor weight(const std::string& name, std::size_t in, std::size_t out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(in * out);
    for (double& v : values) v = dist(rng_);
    return add(name, Tensor::from({in, out}, std::move(values), true));
  }

  Tensor bias(const std::string& name, std::size_t width) { return add(name, Tensor::zeros({width}, true)); }

  Tensor add(const std::string& name, Tensor tensor) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    params_.push_back({name, tensor});
    return tensor;
  }

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }

  const Parameter* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Parameter> params_;
};

/// Affine map x·W + b, optionally followed by ReLU (the non-linear transform
/// used throughout the attention blocks).
class Dense {
 public:
  Dense() = default;
  Dense(ParameterRegistry& registry, const std::string& name, std::size_t in, std::size_t out, bool relu)
      : weight_(registry.weight(name + ".weight", in, out)), bias_(registry.bias(name + ".bias", out)), relu_(relu) {}

  Tensor operator()(const Tensor& x) const {
    Tensor y = add(matmul(x, weight_), bias_);
    return relu_ ? gman::relu(y) : y;
  }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  bool has_relu() const { return relu_; }
  std::size_t in_features() const { return weight_.extent(0); }
  std::size_t out_features() const { return weight_.extent(1); }

 private:
  Tensor weight_;
  Tensor bias_;
  bool relu_ = false;
};

/// Two fully-connected layers: ReLU after the first, linear second.
class TwoLayer {
 public:
  TwoLayer() = default;
  TwoLayer(ParameterRegistry& registry, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out)
      : first_(registry, name + ".fc1", in, hidden, true), second_(registry, name + ".fc2", hidden, out, false) {}

  Tensor operator()(const Tensor& x) const { return second_(first_(x)); }

  const Dense& first() const { return first_; }
  const Dense& second() const { return second_; }

 private:
  Dense first_;
  Dense second_;
};

}  // namespace gman
