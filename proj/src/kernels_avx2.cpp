// AVX2 variants of the numeric kernels. Compiled with -mavx2 -mno-fma
// -ffp-contract=off so that lane arithmetic matches the scalar reference
// operation-for-operation; only the reduction order differs.

#include "hierdet/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace hierdet::kernels {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d va = _mm256_loadu_pd(a + i);
    __m256d vb = _mm256_loadu_pd(b + i);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(va, vb));
  }
  double result = hsum(acc);
  for (; i < n; ++i) result += a[i] * b[i];
  return result;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(va, vx)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double result = hsum(acc);
  for (; i < n; ++i) result += x[i];
  return result;
}

double max_value_avx2(const double* x, std::size_t n) {
  if (n < 8) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
  }
  __m256d acc = _mm256_loadu_pd(x);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(x + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]),
                      std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void shifted_relu_avx2(const double* x, double shift, double* out,
                       std::size_t n) {
  __m256d vs = _mm256_set1_pd(shift);
  __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_sub_pd(_mm256_loadu_pd(x + i), vs);
    _mm256_storeu_pd(out + i, _mm256_max_pd(v, zero));
  }
  for (; i < n; ++i) out[i] = std::max(x[i] - shift, 0.0);
}

double l1_distance_avx2(const double* a, const double* b, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_andnot_pd(sign_mask, d));
  }
  double result = hsum(acc);
  for (; i < n; ++i) result += std::fabs(a[i] - b[i]);
  return result;
}

constexpr Ops kAvx2Ops = {
    dot_avx2,       axpy_avx2,         sum_avx2,
    max_value_avx2, shifted_relu_avx2, l1_distance_avx2,
};

}  // namespace

const Ops* avx2_ops() {
  static const Ops* table =
      __builtin_cpu_supports("avx2") ? &kAvx2Ops : nullptr;
  return table;
}

}  // namespace hierdet::kernels

#else
#error "kernels_avx2.cpp must be compiled with -mavx2"
#endif
