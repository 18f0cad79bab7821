#pragma once

// Dense row-major kernels behind every matrix product in the library.
//
// Each kernel has a scalar reference implementation and, where the target
// supports it, an AVX2/FMA variant. The variant is chosen once at startup
// from CPUID and can be overridden with BTX_ISA=scalar|avx2 or
// set_active_isa(). Reductions in the SIMD variants are reassociated, so the
// two paths agree to rounding, not bit-for-bit; a given ISA is deterministic.

#include <cstddef>
#include <string_view>

namespace btx::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct KernelTable {
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c, bool accumulate);
  // C[m x n] (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                  const T* b, T* c, bool accumulate);
  T (*dot)(std::size_t n, const T* x, const T* y);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
};

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the variant was not compiled in or the CPU lacks it.
template <typename T>
const KernelTable<T>* avx2_table();

bool isa_supported(Isa isa);
Isa detected_isa();
Isa active_isa();
// Throws std::invalid_argument when the ISA is not supported here.
void set_active_isa(Isa isa);

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
const KernelTable<T>& active() {
  return table<T>(active_isa());
}

template <typename T>
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate = false) {
  active<T>().gemm_nn(m, n, k, a, b, c, accumulate);
}

template <typename T>
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate = false) {
  active<T>().gemm_nt(m, n, k, a, b, c, accumulate);
}

template <typename T>
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    const T* b, T* c, bool accumulate = false) {
  active<T>().gemm_tn(m, n, k, a, b, c, accumulate);
}

template <typename T>
inline T dot(std::size_t n, const T* x, const T* y) {
  return active<T>().dot(n, x, y);
}

template <typename T>
inline void axpy(std::size_t n, T alpha, const T* x, T* y) {
  active<T>().axpy(n, alpha, x, y);
}

}  // namespace btx::kernels
