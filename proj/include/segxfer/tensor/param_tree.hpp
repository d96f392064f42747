#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "segxfer/tensor/tensor.hpp"

namespace segxfer {

/// Named parameters and buffers of a model, keyed by slash-paths such as
/// `encoder/block0/conv1/weight`. std::map keeps iteration lexicographic.
///
/// Trainable tensors live in `params`; non-trainable state (batch-norm running
/// statistics) lives in `buffers`. Both travel together through checkpoints.
template <typename T>
struct ParamTree {
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> buffers;

  Tensor<T>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) fail("unet", "missing_param", "no parameter named " + name);
    return it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) fail("unet", "missing_param", "no parameter named " + name);
    return it->second;
  }
  Tensor<T>& buffer(const std::string& name) {
    auto it = buffers.find(name);
    if (it == buffers.end()) fail("unet", "missing_buffer", "no buffer named " + name);
    return it->second;
  }

  bool contains(const std::string& name) const {
    return params.count(name) != 0 || buffers.count(name) != 0;
  }

  /// Deep copy; gradients are not carried over.
  ParamTree clone() const {
    ParamTree out;
    for (const auto& [k, v] : params) {
      out.params.emplace(k, v.clone());
      out.params.at(k).clear_grad();
    }
    for (const auto& [k, v] : buffers) out.buffers.emplace(k, v.clone());
    return out;
  }

  void zero_grad() {
    for (auto& [k, v] : params) v.clear_grad();
  }
};

inline bool has_prefix(std::string_view name, std::string_view prefix) {
  return name.substr(0, prefix.size()) == prefix;
}

/// Number of trainable scalars.
template <typename T>
std::size_t param_count(const ParamTree<T>& tree) {
  std::size_t n = 0;
  for (const auto& [k, v] : tree.params) n += v.numel();
  return n;
}

template <typename T>
std::vector<std::string> names_with_prefix(const std::map<std::string, Tensor<T>>& table,
                                           std::string_view prefix) {
  std::vector<std::string> out;
  for (const auto& [k, v] : table) {
    if (has_prefix(k, prefix)) out.push_back(k);
  }
  return out;
}

}  // namespace segxfer
