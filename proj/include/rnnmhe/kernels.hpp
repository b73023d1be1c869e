#pragma once

// Dense double-precision primitives behind the recurrent cells, the loss
// gradients and the optimizers. Each primitive has a scalar reference
// implementation and, on x86-64, an AVX2/FMA variant chosen at runtime.
// The two agree to rounding (FMA contraction and a different summation
// order); tests/unit/test_kernels.cpp pins the tolerance.

#include <cstddef>
#include <span>
#include <string_view>

namespace rnnmhe::kernels {

enum class Backend { Scalar, Avx2 };

struct KernelTable {
  Backend backend;
  /// y = W x (+ b if b != nullptr); W is rows x cols, row-major.
  void (*gemv)(std::size_t rows, std::size_t cols, const double* W, const double* x,
               const double* b, double* y);
  /// out += W^T v
  void (*gemv_t_acc)(std::size_t rows, std::size_t cols, const double* W, const double* v,
                     double* out);
  /// G += a x^T; G is rows x cols.
  void (*ger_acc)(std::size_t rows, std::size_t cols, const double* a, const double* x,
                  double* G);
  double (*dot)(std::size_t n, const double* a, const double* b);
  /// y += alpha x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// sum_i (a_i - b_i)^2
  double (*sqdist)(std::size_t n, const double* a, const double* b);
};

const KernelTable& scalar_table() noexcept;

/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table() noexcept;

bool cpu_supports_avx2_fma() noexcept;

/// Table used by the library. Defaults to the best variant the CPU supports.
const KernelTable& active() noexcept;

/// Process-wide override, meant to be called once at startup (CLI flag,
/// config, tests). Throws rnnmhe::Error if the backend is unavailable.
void select(Backend backend);

/// Best available backend for this CPU.
Backend detect() noexcept;

std::string_view to_string(Backend backend) noexcept;

/// "scalar", "avx2" or "auto".
Backend parse_backend(std::string_view name);

// Span conveniences for call sites outside the hot loops.
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.size(), a.data(), b.data());
}
inline double sqdist(std::span<const double> a, std::span<const double> b) {
  return active().sqdist(a.size(), a.data(), b.data());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(x.size(), alpha, x.data(), y.data());
}

}  // namespace rnnmhe::kernels
