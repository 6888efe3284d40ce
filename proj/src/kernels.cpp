#include "tzlab/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "tzlab/error.hpp"

namespace tzlab::kernels {

namespace {

const KernelTable kScalar{&scalar::dot, &scalar::axpy, &scalar::gemm_acc};

#if defined(TZLAB_HAVE_AVX2)
const KernelTable kAvx2{&avx2::dot, &avx2::axpy, &avx2::gemm_acc};

bool cpu_has_avx2() noexcept {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

Isa detect() {
  Isa isa = isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
  if (const char* env = std::getenv("TZLAB_ISA")) {
    const std::string v(env);
    if (v == "scalar") isa = Isa::Scalar;
    else if (v == "avx2" && isa_available(Isa::Avx2)) isa = Isa::Avx2;
  }
  return isa;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
#if defined(TZLAB_HAVE_AVX2)
  return cpu_has_avx2() ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

bool isa_available(Isa isa) noexcept {
  if (isa == Isa::Scalar) return true;
  return avx2_table() != nullptr;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ConfigError("kernels: ISA '" + std::string(isa_name(isa)) + "' is not available on this host");
  }
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

const KernelTable& active() noexcept {
#if defined(TZLAB_HAVE_AVX2)
  if (active_isa() == Isa::Avx2) return kAvx2;
#endif
  return kScalar;
}

}  // namespace tzlab::kernels
