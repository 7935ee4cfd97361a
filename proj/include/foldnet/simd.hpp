#pragma once

// Inner-loop arithmetic kernels. Each backend (portable scalar reference, AVX2+FMA,
// NEON) fills one KernelTable; the active table is picked once from the CPU at first
// use and can be overridden with FOLDNET_SIMD=scalar|avx2|neon or set_backend().

#include <cstddef>
#include <string_view>
#include <vector>

namespace foldnet::simd {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
  Backend backend;
  const char* name;
  // y[i] += a * x[i]
  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  // sum_i x[i] * y[i]
  double (*dot)(std::size_t n, const double* x, const double* y);
  // sum_i (x[i] - y[i])^2
  double (*squared_distance)(std::size_t n, const double* x, const double* y);
  // sum_i |x[i] - y[i]|
  double (*manhattan_distance)(std::size_t n, const double* x, const double* y);
  // C[m, n] += sum_k A[m, k] * B[k, n] for row-major blocks with leading dimensions
  // lda, ldb, ldc. Every C element accumulates over k in ascending order, so its value
  // does not depend on M, N or where it falls in the register blocking.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc);
};

const KernelTable& kernels() noexcept;

// Backends compiled in AND supported by the running CPU; scalar is always first.
std::vector<Backend> available_backends();
const KernelTable* table_for(Backend backend) noexcept;
// Throws ValidationError when the backend is not available on this machine.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend) noexcept;

namespace detail {
const KernelTable& scalar_table() noexcept;
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;
}  // namespace detail

}  // namespace foldnet::simd
