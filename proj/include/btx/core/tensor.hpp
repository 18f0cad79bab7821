#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "btx/core/errors.hpp"

namespace btx {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

// Contiguous row-major dense tensor. T is float or double.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_numel(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor filled(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers; a rank-1 tensor is treated as a single row.
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  T* row(std::size_t i) { return data_.data() + i * cols(); }
  const T* row(std::size_t i) const { return data_.data() + i * cols(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    for (const T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_shape() const {
    for (const std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero axis");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace btx
