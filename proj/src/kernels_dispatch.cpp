#include <atomic>
#include <string>

#include "kernels_impl.hpp"
#include "rnnmhe/error.hpp"
#include "rnnmhe/kernels.hpp"

namespace rnnmhe::kernels {
namespace {

constexpr KernelTable kScalar{Backend::Scalar, scalar::gemv,  scalar::gemv_t_acc, scalar::ger_acc,
                              scalar::dot,     scalar::axpy,  scalar::sqdist};

#if defined(RNNMHE_HAVE_AVX2)
constexpr KernelTable kAvx2{Backend::Avx2, avx2::gemv, avx2::gemv_t_acc, avx2::ger_acc,
                            avx2::dot,     avx2::axpy, avx2::sqdist};
#endif

const KernelTable* table_for(Backend b) noexcept {
  if (b == Backend::Avx2) {
    return cpu_supports_avx2_fma() ? avx2_table() : nullptr;
  }
  return &kScalar;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{table_for(detect())};
  return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
#if defined(RNNMHE_HAVE_AVX2)
  return &kAvx2;
#else
  return nullptr;
#endif
}

bool cpu_supports_avx2_fma() noexcept {
#if defined(RNNMHE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect() noexcept {
  return (avx2_table() != nullptr && cpu_supports_avx2_fma()) ? Backend::Avx2 : Backend::Scalar;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

void select(Backend backend) {
  const KernelTable* t = table_for(backend);
  if (t == nullptr) {
    throw Error("kernel backend '" + std::string(to_string(backend)) +
                "' is not available on this build or CPU");
  }
  current().store(t, std::memory_order_release);
}

std::string_view to_string(Backend backend) noexcept {
  switch (backend) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::Scalar;
  if (name == "avx2") return Backend::Avx2;
  if (name == "auto") return detect();
  throw ConfigError("kernels", "unknown kernel backend '" + std::string(name) + "'");
}

}  // namespace rnnmhe::kernels
