// AVX2/FMA kernels. Functions carry a target attribute instead of building
// the translation unit with -mavx2, so nothing here leaks AVX2 code into
// inline functions shared with the rest of the program. Keep this file free
// of standard library templates for the same reason.

#include "btx/kernels/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define BTX_HAVE_AVX2_KERNELS 1
#include <immintrin.h>
#else
#define BTX_HAVE_AVX2_KERNELS 0
#endif

namespace btx::kernels {

#if BTX_HAVE_AVX2_KERNELS

#define BTX_AVX2 __attribute__((target("avx2,fma")))

namespace {

template <typename T>
struct Lane;

template <>
struct Lane<float> {
  using V = __m256;
  static constexpr std::size_t width = 8;
  BTX_AVX2 static V zero() { return _mm256_setzero_ps(); }
  BTX_AVX2 static V set1(float x) { return _mm256_set1_ps(x); }
  BTX_AVX2 static V load(const float* p) { return _mm256_loadu_ps(p); }
  BTX_AVX2 static void store(float* p, V v) { _mm256_storeu_ps(p, v); }
  BTX_AVX2 static V add(V a, V b) { return _mm256_add_ps(a, b); }
  BTX_AVX2 static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  BTX_AVX2 static float hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Lane<double> {
  using V = __m256d;
  static constexpr std::size_t width = 4;
  BTX_AVX2 static V zero() { return _mm256_setzero_pd(); }
  BTX_AVX2 static V set1(double x) { return _mm256_set1_pd(x); }
  BTX_AVX2 static V load(const double* p) { return _mm256_loadu_pd(p); }
  BTX_AVX2 static void store(double* p, V v) { _mm256_storeu_pd(p, v); }
  BTX_AVX2 static V add(V a, V b) { return _mm256_add_pd(a, b); }
  BTX_AVX2 static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  BTX_AVX2 static double hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high));
  }
};

// A is read through an accessor so one micro-kernel serves both A*B and
// A^T*B. R rows of C are produced per pass; B rows are streamed once.
struct RowMajorA {
  std::size_t k;
  template <typename T>
  const T& at(const T* a, std::size_t i, std::size_t p) const {
    return a[i * k + p];
  }
};

struct TransposedA {
  std::size_t m;
  template <typename T>
  const T& at(const T* a, std::size_t i, std::size_t p) const {
    return a[p * m + i];
  }
};

template <int R, typename T, typename Access>
BTX_AVX2 void row_block(std::size_t i0, std::size_t n, std::size_t k,
                        const T* a, Access access, const T* b, T* c,
                        bool accumulate) {
  using L = Lane<T>;
  using V = typename L::V;
  constexpr std::size_t w = L::width;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) {
    V acc0[R];
    V acc1[R];
    for (int r = 0; r < R; ++r) {
      acc0[r] = L::zero();
      acc1[r] = L::zero();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const V b0 = L::load(b + p * n + j);
      const V b1 = L::load(b + p * n + j + w);
      for (int r = 0; r < R; ++r) {
        const V av = L::set1(access.at(a, i0 + r, p));
        acc0[r] = L::fma(av, b0, acc0[r]);
        acc1[r] = L::fma(av, b1, acc1[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      T* out = c + (i0 + r) * n + j;
      if (accumulate) {
        acc0[r] = L::add(acc0[r], L::load(out));
        acc1[r] = L::add(acc1[r], L::load(out + w));
      }
      L::store(out, acc0[r]);
      L::store(out + w, acc1[r]);
    }
  }
  for (; j + w <= n; j += w) {
    V acc[R];
    for (int r = 0; r < R; ++r) acc[r] = L::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const V bv = L::load(b + p * n + j);
      for (int r = 0; r < R; ++r) {
        acc[r] = L::fma(L::set1(access.at(a, i0 + r, p)), bv, acc[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      T* out = c + (i0 + r) * n + j;
      if (accumulate) acc[r] = L::add(acc[r], L::load(out));
      L::store(out, acc[r]);
    }
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) {
        sum += access.at(a, i0 + r, p) * b[p * n + j];
      }
      T& out = c[(i0 + r) * n + j];
      out = accumulate ? out + sum : sum;
    }
  }
}

template <typename T, typename Access>
BTX_AVX2 void gemm_rows(std::size_t m, std::size_t n, std::size_t k,
                        const T* a, Access access, const T* b, T* c,
                        bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(i, n, k, a, access, b, c, accumulate);
  switch (m - i) {
    case 3: row_block<3>(i, n, k, a, access, b, c, accumulate); break;
    case 2: row_block<2>(i, n, k, a, access, b, c, accumulate); break;
    case 1: row_block<1>(i, n, k, a, access, b, c, accumulate); break;
    default: break;
  }
}

template <typename T>
BTX_AVX2 void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k,
                           const T* a, const T* b, T* c, bool accumulate) {
  gemm_rows(m, n, k, a, RowMajorA{k}, b, c, accumulate);
}

template <typename T>
BTX_AVX2 void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k,
                           const T* a, const T* b, T* c, bool accumulate) {
  gemm_rows(m, n, k, a, TransposedA{m}, b, c, accumulate);
}

template <typename T>
BTX_AVX2 T dot_avx2(std::size_t n, const T* x, const T* y) {
  using L = Lane<T>;
  constexpr std::size_t w = L::width;
  auto acc0 = L::zero();
  auto acc1 = L::zero();
  std::size_t i = 0;
  for (; i + 2 * w <= n; i += 2 * w) {
    acc0 = L::fma(L::load(x + i), L::load(y + i), acc0);
    acc1 = L::fma(L::load(x + i + w), L::load(y + i + w), acc1);
  }
  for (; i + w <= n; i += w) acc0 = L::fma(L::load(x + i), L::load(y + i), acc0);
  T sum = L::hsum(L::add(acc0, acc1));
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

// Four columns of C at a time share each load of the A row.
template <typename T>
BTX_AVX2 void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k,
                           const T* a, const T* b, T* c, bool accumulate) {
  using L = Lane<T>;
  constexpr std::size_t w = L::width;
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const T* b0 = b + (j + 0) * k;
      const T* b1 = b + (j + 1) * k;
      const T* b2 = b + (j + 2) * k;
      const T* b3 = b + (j + 3) * k;
      auto s0 = L::zero();
      auto s1 = L::zero();
      auto s2 = L::zero();
      auto s3 = L::zero();
      std::size_t p = 0;
      for (; p + w <= k; p += w) {
        const auto av = L::load(arow + p);
        s0 = L::fma(av, L::load(b0 + p), s0);
        s1 = L::fma(av, L::load(b1 + p), s1);
        s2 = L::fma(av, L::load(b2 + p), s2);
        s3 = L::fma(av, L::load(b3 + p), s3);
      }
      T r0 = L::hsum(s0);
      T r1 = L::hsum(s1);
      T r2 = L::hsum(s2);
      T r3 = L::hsum(s3);
      for (; p < k; ++p) {
        r0 += arow[p] * b0[p];
        r1 += arow[p] * b1[p];
        r2 += arow[p] * b2[p];
        r3 += arow[p] * b3[p];
      }
      T* out = c + i * n + j;
      if (accumulate) {
        out[0] += r0;
        out[1] += r1;
        out[2] += r2;
        out[3] += r3;
      } else {
        out[0] = r0;
        out[1] = r1;
        out[2] = r2;
        out[3] = r3;
      }
    }
    for (; j < n; ++j) {
      const T r = dot_avx2(k, arow, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + r : r;
    }
  }
}

template <typename T>
BTX_AVX2 void axpy_avx2(std::size_t n, T alpha, const T* x, T* y) {
  using L = Lane<T>;
  constexpr std::size_t w = L::width;
  const auto av = L::set1(alpha);
  std::size_t i = 0;
  for (; i + w <= n; i += w) L::store(y + i, L::fma(av, L::load(x + i), L::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
constexpr KernelTable<T> kAvx2{&gemm_nn_avx2<T>, &gemm_nt_avx2<T>,
                               &gemm_tn_avx2<T>, &dot_avx2<T>, &axpy_avx2<T>};

}  // namespace

bool avx2_compiled() { return true; }

template <>
const KernelTable<float>* avx2_table<float>() {
  return isa_supported(Isa::avx2) ? &kAvx2<float> : nullptr;
}

template <>
const KernelTable<double>* avx2_table<double>() {
  return isa_supported(Isa::avx2) ? &kAvx2<double> : nullptr;
}

#else

bool avx2_compiled() { return false; }

template <>
const KernelTable<float>* avx2_table<float>() {
  return nullptr;
}

template <>
const KernelTable<double>* avx2_table<double>() {
  return nullptr;
}

#endif

}  // namespace btx::kernels
