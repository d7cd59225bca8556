// Compiled with -mavx2 -mfma; only reached through the dispatch table after
// a CPUID check.
#include <immintrin.h>

#include "dpot/kernels/kernels.hpp"

namespace dpot::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4x8 register block: 8 accumulators, 2 B loads and 1 broadcast live.
void block_4x8(const GemmArgs& g, std::size_t i0, std::size_t j0) {
  __m256d c00, c01, c10, c11, c20, c21, c30, c31;
  double* c0 = g.c + i0 * g.ldc + j0;
  double* c1 = c0 + g.ldc;
  double* c2 = c1 + g.ldc;
  double* c3 = c2 + g.ldc;
  if (g.accumulate) {
    c00 = _mm256_loadu_pd(c0);
    c01 = _mm256_loadu_pd(c0 + 4);
    c10 = _mm256_loadu_pd(c1);
    c11 = _mm256_loadu_pd(c1 + 4);
    c20 = _mm256_loadu_pd(c2);
    c21 = _mm256_loadu_pd(c2 + 4);
    c30 = _mm256_loadu_pd(c3);
    c31 = _mm256_loadu_pd(c3 + 4);
  } else {
    c00 = c01 = c10 = c11 = c20 = c21 = c30 = c31 = _mm256_setzero_pd();
  }
  const double* a0 = g.a + i0 * g.lda;
  const double* a1 = a0 + g.lda;
  const double* a2 = a1 + g.lda;
  const double* a3 = a2 + g.lda;
  const double* bp = g.b + j0;
  for (std::size_t p = 0; p < g.k; ++p, bp += g.ldb) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c0, c00);
  _mm256_storeu_pd(c0 + 4, c01);
  _mm256_storeu_pd(c1, c10);
  _mm256_storeu_pd(c1 + 4, c11);
  _mm256_storeu_pd(c2, c20);
  _mm256_storeu_pd(c2 + 4, c21);
  _mm256_storeu_pd(c3, c30);
  _mm256_storeu_pd(c3 + 4, c31);
}

void block_1x8(const GemmArgs& g, std::size_t i, std::size_t j0) {
  double* cr = g.c + i * g.ldc + j0;
  __m256d c0 = g.accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
  __m256d c1 = g.accumulate ? _mm256_loadu_pd(cr + 4) : _mm256_setzero_pd();
  const double* ar = g.a + i * g.lda;
  const double* bp = g.b + j0;
  for (std::size_t p = 0; p < g.k; ++p, bp += g.ldb) {
    const __m256d av = _mm256_broadcast_sd(ar + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(bp + 4), c1);
  }
  _mm256_storeu_pd(cr, c0);
  _mm256_storeu_pd(cr + 4, c1);
}

void block_1x4(const GemmArgs& g, std::size_t i, std::size_t j0) {
  double* cr = g.c + i * g.ldc + j0;
  __m256d c0 = g.accumulate ? _mm256_loadu_pd(cr) : _mm256_setzero_pd();
  const double* ar = g.a + i * g.lda;
  const double* bp = g.b + j0;
  for (std::size_t p = 0; p < g.k; ++p, bp += g.ldb) {
    c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p), _mm256_loadu_pd(bp), c0);
  }
  _mm256_storeu_pd(cr, c0);
}

void column_tail(const GemmArgs& g, std::size_t i, std::size_t j) {
  double acc = g.accumulate ? g.c[i * g.ldc + j] : 0.0;
  const double* ar = g.a + i * g.lda;
  for (std::size_t p = 0; p < g.k; ++p) acc += ar[p] * g.b[p * g.ldb + j];
  g.c[i * g.ldc + j] = acc;
}

void gemm(const GemmArgs& g) {
  std::size_t j0 = 0;
  for (; j0 + 8 <= g.n; j0 += 8) {
    std::size_t i0 = 0;
    for (; i0 + 4 <= g.m; i0 += 4) block_4x8(g, i0, j0);
    for (; i0 < g.m; ++i0) block_1x8(g, i0, j0);
  }
  if (j0 + 4 <= g.n) {
    for (std::size_t i = 0; i < g.m; ++i) block_1x4(g, i, j0);
    j0 += 4;
  }
  for (; j0 < g.n; ++j0) {
    for (std::size_t i = 0; i < g.m; ++i) column_tail(g, i, j0);
  }
}

template <typename Vec, typename Scalar>
inline void binary(std::size_t n, const double* a, const double* b, double* out, Vec vop,
                   Scalar sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
         [](double x, double y) { return x + y; });
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
         [](double x, double y) { return x - y; });
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
         [](double x, double y) { return x * y; });
}

void scale(std::size_t n, double s, const double* a, double* out) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(sv, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = s * a[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void fma_acc(std::size_t n, const double* a, const double* b, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a[i] * b[i];
}

double dot(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(std::size_t n, const double* a) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

constexpr KernelTable kTable{&gemm, &add, &sub, &mul, &scale, &axpy, &fma_acc, &dot, &sum};

}  // namespace

const KernelTable* table() noexcept { return &kTable; }

}  // namespace dpot::kernels::avx2
