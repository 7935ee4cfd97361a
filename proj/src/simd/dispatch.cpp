#include <atomic>
#include <cstdlib>
#include <string>

#include "foldnet/error.hpp"
#include "foldnet/simd.hpp"

namespace foldnet::simd {

namespace detail {
#if !defined(FOLDNET_HAVE_AVX2)
const KernelTable* avx2_table() noexcept { return nullptr; }
#endif
#if !defined(FOLDNET_HAVE_NEON)
const KernelTable* neon_table() noexcept { return nullptr; }
#endif
}  // namespace detail

namespace {

bool cpu_supports(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(FOLDNET_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(FOLDNET_HAVE_NEON)
      return true;  // Advanced SIMD is mandatory on AArch64.
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* pick_default() noexcept {
  if (const char* env = std::getenv("FOLDNET_SIMD")) {
    const std::string want(env);
    for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
      if (want == backend_name(b) && cpu_supports(b) && table_for(b)) return table_for(b);
    }
  }
  for (Backend b : {Backend::avx2, Backend::neon}) {
    if (cpu_supports(b) && table_for(b)) return table_for(b);
  }
  return &detail::scalar_table();
}

std::atomic<const KernelTable*>& active() noexcept {
  static std::atomic<const KernelTable*> table{pick_default()};
  return table;
}

}  // namespace

const KernelTable& kernels() noexcept { return *active().load(std::memory_order_relaxed); }

const KernelTable* table_for(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return &detail::scalar_table();
    case Backend::avx2:
      return detail::avx2_table();
    case Backend::neon:
      return detail::neon_table();
  }
  return nullptr;
}

std::vector<Backend> available_backends() {
  std::vector<Backend> out;
  for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
    if (table_for(b) && cpu_supports(b)) out.push_back(b);
  }
  return out;
}

void set_backend(Backend backend) {
  const KernelTable* t = table_for(backend);
  if (!t || !cpu_supports(backend)) {
    throw ValidationError("SIMD backend '" + std::string(backend_name(backend)) +
                          "' is not available on this machine");
  }
  active().store(t, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) noexcept {
  switch (backend) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
  }
  return "unknown";
}

}  // namespace foldnet::simd
