// Scalar reference kernels. Straight loops in natural summation order; these
// define the results the SIMD variants are tested against.

#include "btx/kernels/kernels.hpp"

namespace btx::kernels {
namespace {

template <typename T>
void gemm_nn_ref(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void gemm_nt_ref(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
void gemm_tn_ref(std::size_t m, std::size_t n, std::size_t k, const T* a,
                 const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T sum = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

template <typename T>
T dot_ref(std::size_t n, const T* x, const T* y) {
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
constexpr KernelTable<T> kScalar{&gemm_nn_ref<T>, &gemm_nt_ref<T>,
                                 &gemm_tn_ref<T>, &dot_ref<T>, &axpy_ref<T>};

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  return kScalar<float>;
}

template <>
const KernelTable<double>& scalar_table<double>() {
  return kScalar<double>;
}

}  // namespace btx::kernels
