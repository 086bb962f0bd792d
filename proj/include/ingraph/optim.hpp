#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include "ingraph/rng.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

struct OptimConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double clip_norm = 0.0;  // global-norm gradient clip; 0 disables

  void validate() const {
    if (learning_rate <= 0.0) throw ValueError("learning_rate must be > 0");
    if (weight_decay < 0.0) throw ValueError("weight_decay must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ValueError("momentum must be in [0,1)");
    if (clip_norm < 0.0) throw ValueError("clip_norm must be >= 0");
  }
};

// A named trainable tensor plus its SGD momentum buffer.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::vector<double> momentum_buffer;

  Parameter() = default;
  Parameter(std::string n, Tensor t)
      : name(std::move(n)), tensor(std::move(t)),
        momentum_buffer(tensor.numel(), 0.0) {
    tensor.set_requires_grad(true);
  }
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
inline Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// v <- momentum*v + grad + weight_decay*theta;  theta <- theta - lr*v.
// With clip_norm > 0 the gradients are first rescaled so their global L2
// norm does not exceed it. Gradients are zeroed afterwards.
inline void sgd_step(const std::vector<Parameter*>& params, const OptimConfig& cfg) {
  cfg.validate();
  for (Parameter* p : params) {
    if (!p->tensor.has_grad())
      throw UsageError("sgd_step: parameter '" + p->name + "' has no gradient");
  }
  double grad_scale = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Parameter* p : params)
      for (double g : p->tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) grad_scale = cfg.clip_norm / norm;
  }
  for (Parameter* p : params) {
    const auto& g = p->tensor.grad();
    auto& theta = p->tensor.mutable_values();
    auto& v = p->momentum_buffer;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = cfg.momentum * v[i] + grad_scale * g[i] + cfg.weight_decay * theta[i];
      theta[i] -= cfg.learning_rate * v[i];
    }
    p->tensor.zero_grad();
  }
}

inline void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

inline void check_unique_names(const std::vector<Parameter*>& params) {
  std::unordered_set<std::string> seen;
  for (const Parameter* p : params)
    if (!seen.insert(p->name).second)
      throw UsageError("duplicate parameter name '" + p->name + "'");
}

// -- common layer parameter bundles ------------------------------------------

struct Conv1x1Params {
  Parameter weight;  // [Din,Dout]
  Parameter bias;    // [Dout]

  Conv1x1Params() = default;
  Conv1x1Params(const std::string& prefix, std::size_t din, std::size_t dout,
                Rng& rng)
      : weight(prefix + ".weight", uniform_init({din, dout}, din, rng)),
        bias(prefix + ".bias", uniform_init({dout}, din, rng)) {}

  Tensor operator()(const Tensor& x) const {
    return conv1x1(x, weight.tensor, bias.tensor);
  }
  std::size_t in_dim() const { return weight.tensor.dim(0); }
  std::size_t out_dim() const { return weight.tensor.dim(1); }
};

struct FcParams {
  Parameter weight;  // [Din,Dout]
  Parameter bias;    // [Dout]

  FcParams() = default;
  FcParams(const std::string& prefix, std::size_t din, std::size_t dout, Rng& rng)
      : weight(prefix + ".weight", uniform_init({din, dout}, din, rng)),
        bias(prefix + ".bias", uniform_init({dout}, din, rng)) {}

  Tensor operator()(const Tensor& x) const {
    return fully_connected(x, weight.tensor, bias.tensor);
  }
};

}  // namespace ingraph
