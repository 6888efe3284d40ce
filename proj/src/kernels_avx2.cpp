// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check.

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace tzlab::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    i += 4;
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  if (i + 4 <= n) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    i += 4;
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  // Four output rows per pass so each loaded B vector feeds four FMAs.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    double* c0 = c + (i + 0) * n;
    double* c1 = c + (i + 1) * n;
    double* c2 = c + (i + 2) * n;
    double* c3 = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d r0 = _mm256_loadu_pd(c0 + j);
      __m256d r1 = _mm256_loadu_pd(c1 + j);
      __m256d r2 = _mm256_loadu_pd(c2 + j);
      __m256d r3 = _mm256_loadu_pd(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * n + j);
        r0 = _mm256_fmadd_pd(_mm256_set1_pd(a0[p]), bv, r0);
        r1 = _mm256_fmadd_pd(_mm256_set1_pd(a1[p]), bv, r1);
        r2 = _mm256_fmadd_pd(_mm256_set1_pd(a2[p]), bv, r2);
        r3 = _mm256_fmadd_pd(_mm256_set1_pd(a3[p]), bv, r3);
      }
      _mm256_storeu_pd(c0 + j, r0);
      _mm256_storeu_pd(c1 + j, r1);
      _mm256_storeu_pd(c2 + j, r2);
      _mm256_storeu_pd(c3 + j, r3);
    }
    for (; j < n; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const double bv = b[p * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d r = _mm256_loadu_pd(crow + j);
      for (std::size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_pd(_mm256_set1_pd(arow[p]), _mm256_loadu_pd(b + p * n + j), r);
      }
      _mm256_storeu_pd(crow + j, r);
    }
    for (; j < n; ++j) {
      double s = crow[j];
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * b[p * n + j];
      crow[j] = s;
    }
  }
}

}  // namespace tzlab::kernels::avx2
