#pragma once

// Dense real64 inner loops used by the tensor engine.
//
// Every kernel exists twice: a portable scalar reference (kernels::scalar)
// and an AVX2/FMA variant (kernels::avx2). The variant is picked once at
// startup from CPUID; DPOT_ISA=scalar in the environment forces the
// reference path. Both variants agree to rounding (FMA contraction and
// summation order differ), which the kernel equivalence tests pin down.

#include <cstddef>
#include <string_view>

namespace dpot::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Row-major C[m x n] (+)= A[m x k] * B[k x n] with leading dimensions.
struct GemmArgs {
  std::size_t m = 0, n = 0, k = 0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

struct KernelTable {
  void (*gemm)(const GemmArgs&);
  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  void (*sub)(std::size_t n, const double* a, const double* b, double* out);
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  void (*scale)(std::size_t n, double s, const double* a, double* out);
  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// y += a * b (elementwise)
  void (*fma_acc)(std::size_t n, const double* a, const double* b, double* y);
  double (*dot)(std::size_t n, const double* a, const double* b);
  double (*sum)(std::size_t n, const double* a);
};

namespace scalar {
const KernelTable& table() noexcept;
}

namespace avx2 {
/// Null when the library was built without DPOT_ENABLE_AVX2.
const KernelTable* table() noexcept;
}

/// True when this CPU can run the AVX2/FMA variants and they were compiled in.
bool avx2_available() noexcept;

Isa active_isa() noexcept;
const KernelTable& active() noexcept;

/// Overrides the runtime choice; asking for Avx2 on an unsupported CPU
/// falls back to Scalar. Returns the ISA actually selected.
Isa select(Isa isa) noexcept;

const KernelTable& table_for(Isa isa) noexcept;

}  // namespace dpot::kernels
