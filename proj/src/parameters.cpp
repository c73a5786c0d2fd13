#include "deco/parameters.hpp"

#include <algorithm>

namespace deco {

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) {
    auto g = p.tensor.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

ad::Tensor& ParameterStore::add(const std::string& name, ad::Shape shape) {
  return add(name, ad::Tensor::zeros(std::move(shape), true));
}

ad::Tensor& ParameterStore::add(const std::string& name, ad::Tensor tensor) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (!tensor.requires_grad()) tensor = ad::Tensor::from(tensor.shape(), {tensor.values().begin(), tensor.values().end()}, true);
  index_.emplace(name, params_.size());
  params_.push_back({name, std::move(tensor)});
  return params_.back().tensor;
}

const ad::Tensor& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second].tensor;
}

ad::Tensor& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return params_[it->second].tensor;
}

std::vector<Parameter*> ParameterStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p.name.starts_with(prefix)) out.push_back(&p);
  }
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

}  // namespace deco
