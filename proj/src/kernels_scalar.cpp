#include "kernels_impl.hpp"

namespace rnnmhe::kernels::scalar {

void gemv(std::size_t rows, std::size_t cols, const double* W, const double* x, const double* b,
          double* y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* w = W + i * cols;
    double acc = b ? b[i] : 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += w[j] * x[j];
    y[i] = acc;
  }
}

void gemv_t_acc(std::size_t rows, std::size_t cols, const double* W, const double* v,
                double* out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double* w = W + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += w[j] * vi;
  }
}

void ger_acc(std::size_t rows, std::size_t cols, const double* a, const double* x, double* G) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    double* g = G + i * cols;
    for (std::size_t j = 0; j < cols; ++j) g[j] += ai * x[j];
  }
}

double dot(std::size_t n, const double* a, const double* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sqdist(std::size_t n, const double* a, const double* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace rnnmhe::kernels::scalar
