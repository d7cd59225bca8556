#include "dpot/kernels/kernels.hpp"

namespace dpot::kernels::scalar {
namespace {

void gemm(const GemmArgs& g) {
  for (std::size_t i = 0; i < g.m; ++i) {
    double* crow = g.c + i * g.ldc;
    if (!g.accumulate) {
      for (std::size_t j = 0; j < g.n; ++j) crow[j] = 0.0;
    }
    const double* arow = g.a + i * g.lda;
    for (std::size_t p = 0; p < g.k; ++p) {
      const double av = arow[p];
      const double* brow = g.b + p * g.ldb;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(std::size_t n, double s, const double* a, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = s * a[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void fma_acc(std::size_t n, const double* a, const double* b, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

double dot(std::size_t n, const double* a, const double* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum(std::size_t n, const double* a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

constexpr KernelTable kTable{&gemm, &add, &sub, &mul, &scale, &axpy, &fma_acc, &dot, &sum};

}  // namespace

const KernelTable& table() noexcept { return kTable; }

}  // namespace dpot::kernels::scalar
