#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "segxfer/tensor/param_tree.hpp"

namespace segxfer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for the parameters an optimiser is responsible for.
/// Parameters outside `moments` are never touched by adam_step().
template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Moments> moments;

  OptimizerState() = default;
  OptimizerState(const ParamTree<T>& tree, const std::vector<std::string>& names,
                 AdamConfig cfg = {})
      : config(cfg) {
    for (const auto& name : names) {
      const auto n = tree.param(name).numel();
      moments.emplace(name, Moments{std::vector<T>(n, T{0}), std::vector<T>(n, T{0})});
    }
  }

  bool tracks(const std::string& name) const { return moments.count(name) != 0; }
};

/// Adam with bias correction. Gradients of updated parameters are cleared.
template <typename T>
void adam_step(ParamTree<T>& tree, OptimizerState<T>& state) {
  for (const auto& entry : state.moments) {
    if (!tree.param(entry.first).has_grad()) {
      fail("tensor", "missing_grad",
           "adam_step: parameter " + entry.first + " has no gradient");
    }
  }
  ++state.step;
  const double b1 = state.config.beta1, b2 = state.config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const T lr = static_cast<T>(state.config.lr);
  const T eps = static_cast<T>(state.config.eps);
  for (auto& [name, mom] : state.moments) {
    auto& p = tree.param(name);
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = static_cast<T>(b1) * mom.m[i] + static_cast<T>(1.0 - b1) * g[i];
      mom.v[i] = static_cast<T>(b2) * mom.v[i] + static_cast<T>(1.0 - b2) * g[i] * g[i];
      const T mhat = mom.m[i] / static_cast<T>(c1);
      const T vhat = mom.v[i] / static_cast<T>(c2);
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p.clear_grad();
  }
}

/// Plain gradient descent over the named parameters.
template <typename T>
void sgd_step(ParamTree<T>& tree, const std::vector<std::string>& names, double lr) {
  for (const auto& name : names) {
    auto& p = tree.param(name);
    if (!p.has_grad()) {
      fail("tensor", "missing_grad", "sgd_step: parameter " + name + " has no gradient");
    }
    auto w = p.data();
    auto g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<T>(lr) * g[i];
    p.clear_grad();
  }
}

}  // namespace segxfer
