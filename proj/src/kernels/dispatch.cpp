#include <atomic>
#include <cstdlib>
#include <string>

#include "dpot/kernels/kernels.hpp"

namespace dpot::kernels {

#ifndef DPOT_HAVE_AVX2
namespace avx2 {
const KernelTable* table() noexcept { return nullptr; }
}  // namespace avx2
#endif

namespace {

Isa initial_isa() noexcept {
  if (const char* env = std::getenv("DPOT_ISA"); env != nullptr && std::string(env) == "scalar") {
    return Isa::Scalar;
  }
  return avx2_available() ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() noexcept {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

bool avx2_available() noexcept {
#if defined(DPOT_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok && avx2::table() != nullptr;
#else
  return false;
#endif
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

const KernelTable& table_for(Isa isa) noexcept {
  if (isa == Isa::Avx2 && avx2_available()) return *avx2::table();
  return scalar::table();
}

const KernelTable& active() noexcept { return table_for(active_isa()); }

Isa select(Isa isa) noexcept {
  const Isa chosen = (isa == Isa::Avx2 && !avx2_available()) ? Isa::Scalar : isa;
  current().store(chosen, std::memory_order_relaxed);
  return chosen;
}

}  // namespace dpot::kernels
