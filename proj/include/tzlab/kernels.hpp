#pragma once

// Inner-loop arithmetic kernels. Every kernel has a scalar reference
// implementation; x86-64 builds add AVX2+FMA variants. The active variant is
// chosen once at startup from CPUID and can be overridden with the TZLAB_ISA
// environment variable ("scalar" or "avx2") or set_isa().
//
// Within one ISA the summation order is fixed, so results are reproducible
// run to run. Scalar and AVX2 results agree to rounding (see
// tests/test_kernels.cpp).

#include <cstddef>
#include <string_view>

namespace tzlab::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
  /// sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  /// c[m,n] += sum_k a[m,k] * b[k,n], all row-major and contiguous
  void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
};

const KernelTable& scalar_table() noexcept;
/// Null when the build has no AVX2 variant.
const KernelTable* avx2_table() noexcept;

bool isa_available(Isa isa) noexcept;
Isa active_isa() noexcept;
/// Throws tzlab::ConfigError when the ISA is not available on this host.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa) noexcept;

const KernelTable& active() noexcept;

inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  active().gemm_acc(m, n, k, a, b, c);
}

/// Pins the active ISA for the lifetime of the guard.
class IsaGuard {
 public:
  explicit IsaGuard(Isa isa) : previous_(active_isa()) { set_isa(isa); }
  ~IsaGuard() { set_isa(previous_); }
  IsaGuard(const IsaGuard&) = delete;
  IsaGuard& operator=(const IsaGuard&) = delete;

 private:
  Isa previous_;
};

}  // namespace tzlab::kernels
