#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "btx/core/tensor.hpp"
#include "oracle.hpp"

namespace testutil {

template <typename T>
btx::Tensor<T> to_tensor(const oracle::Mat& m) {
  std::vector<T> data;
  for (const auto& row : m)
    for (const auto v : row) data.push_back(static_cast<T>(v));
  return btx::Tensor<T>({m.size(), m[0].size()}, std::move(data));
}

template <typename T>
btx::Tensor<T> to_tensor(const std::vector<oracle::Real>& v) {
  std::vector<T> data(v.begin(), v.end());
  return btx::Tensor<T>({v.size()}, std::move(data));
}

template <typename T>
oracle::Mat to_mat(const btx::Tensor<T>& t) {
  oracle::Mat m(t.rows(), std::vector<oracle::Real>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t[i * t.cols() + j];
  return m;
}

template <typename T>
std::vector<oracle::Real> to_vec(const btx::Tensor<T>& t) {
  return std::vector<oracle::Real>(t.values().begin(), t.values().end());
}

// Max absolute difference between a tensor and an oracle matrix.
template <typename T>
double max_abs_diff(const btx::Tensor<T>& t, const oracle::Mat& m) {
  double worst = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      worst = std::max(worst, static_cast<double>(std::abs(static_cast<oracle::Real>(t(i, j)) - m[i][j])));
  return worst;
}

template <typename T>
btx::Tensor<T> random_tensor(btx::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  btx::Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(n(rng));
  return t;
}

}  // namespace testutil
