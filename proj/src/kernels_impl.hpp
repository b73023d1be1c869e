#pragma once

#include <cstddef>

namespace rnnmhe::kernels {

namespace scalar {
void gemv(std::size_t rows, std::size_t cols, const double* W, const double* x, const double* b,
          double* y);
void gemv_t_acc(std::size_t rows, std::size_t cols, const double* W, const double* v, double* out);
void ger_acc(std::size_t rows, std::size_t cols, const double* a, const double* x, double* G);
double dot(std::size_t n, const double* a, const double* b);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double sqdist(std::size_t n, const double* a, const double* b);
}  // namespace scalar

#if defined(RNNMHE_HAVE_AVX2)
namespace avx2 {
void gemv(std::size_t rows, std::size_t cols, const double* W, const double* x, const double* b,
          double* y);
void gemv_t_acc(std::size_t rows, std::size_t cols, const double* W, const double* v, double* out);
void ger_acc(std::size_t rows, std::size_t cols, const double* a, const double* x, double* G);
double dot(std::size_t n, const double* a, const double* b);
void axpy(std::size_t n, double alpha, const double* x, double* y);
double sqdist(std::size_t n, const double* a, const double* b);
}  // namespace avx2
#endif

}  // namespace rnnmhe::kernels
