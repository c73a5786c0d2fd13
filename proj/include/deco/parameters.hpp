#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "deco/autodiff.hpp"

namespace deco {

struct Parameter {
  std::string name;  // dotted path, e.g. "global.edgeconv1.weight"
  ad::Tensor tensor;
};

void zero_grads(std::span<Parameter> params);

/// Ordered, name-unique collection of trainable tensors.
class ParameterStore {
 public:
  ad::Tensor& add(const std::string& name, ad::Shape shape);
  ad::Tensor& add(const std::string& name, ad::Tensor tensor);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const ad::Tensor& at(const std::string& name) const;
  ad::Tensor& at(const std::string& name);

  std::span<Parameter> all() { return params_; }
  std::span<const Parameter> all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Parameters whose name starts with `prefix`, in insertion order.
  std::vector<Parameter*> with_prefix(const std::string& prefix);
  std::size_t scalar_count() const;

  void zero_grads() { deco::zero_grads(params_); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace deco
