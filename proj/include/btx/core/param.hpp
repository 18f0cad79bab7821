#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "btx/core/tensor.hpp"

namespace btx {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

// Named parameters in insertion order. Addresses of stored parameters are
// stable for the lifetime of the store.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name) != 0) {
      throw PreconditionError("duplicate parameter name: " + name);
    }
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& get(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("unknown parameter: " + name);
    return *params_[it->second];
  }

  const Parameter<T>& get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("unknown parameter: " + name);
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T(0));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->name);
    return out;
  }

  Parameter<T>& at(std::size_t i) { return *params_.at(i); }
  const Parameter<T>& at(std::size_t i) const { return *params_.at(i); }

  template <typename F>
  void for_each(F&& f) {
    for (auto& p : params_) f(*p);
  }

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& p : params_) f(static_cast<const Parameter<T>&>(*p));
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace btx
