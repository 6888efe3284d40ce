#pragma once

#include <cstddef>

namespace tzlab::kernels::scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
}  // namespace tzlab::kernels::scalar

#if defined(TZLAB_HAVE_AVX2)
namespace tzlab::kernels::avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
}  // namespace tzlab::kernels::avx2
#endif
