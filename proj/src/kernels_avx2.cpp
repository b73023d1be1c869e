// Compiled with -mavx2 -mfma; only reached after cpu_supports_avx2_fma().

#include <immintrin.h>

#include "kernels_impl.hpp"

namespace rnnmhe::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double dot_impl(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  if (i + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

void gemv(std::size_t rows, std::size_t cols, const double* W, const double* x, const double* b,
          double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = dot_impl(cols, W + r * cols, x) + (b ? b[r] : 0.0);
  }
}

void gemv_t_acc(std::size_t rows, std::size_t cols, const double* W, const double* v,
                double* out) {
  const std::size_t vec_end = cols - cols % 4;
  for (std::size_t r = 0; r < rows; ++r) {
    const double vr = v[r];
    if (vr == 0.0) continue;
    const double* w = W + r * cols;
    const __m256d s = _mm256_set1_pd(vr);
    std::size_t j = 0;
    for (; j < vec_end; j += 4) {
      _mm256_storeu_pd(out + j,
                       _mm256_fmadd_pd(_mm256_loadu_pd(w + j), s, _mm256_loadu_pd(out + j)));
    }
    for (; j < cols; ++j) out[j] += w[j] * vr;
  }
}

void ger_acc(std::size_t rows, std::size_t cols, const double* a, const double* x, double* G) {
  const std::size_t vec_end = cols - cols % 4;
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* g = G + r * cols;
    const __m256d s = _mm256_set1_pd(ar);
    std::size_t j = 0;
    for (; j < vec_end; j += 4) {
      _mm256_storeu_pd(g + j,
                       _mm256_fmadd_pd(_mm256_loadu_pd(x + j), s, _mm256_loadu_pd(g + j)));
    }
    for (; j < cols; ++j) g[j] += ar * x[j];
  }
}

double dot(std::size_t n, const double* a, const double* b) { return dot_impl(n, a, b); }

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d s = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), s, _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double sqdist(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  if (i + 4 <= n) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    i += 4;
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace rnnmhe::kernels::avx2
