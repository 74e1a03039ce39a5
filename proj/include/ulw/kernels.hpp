#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

// Data-parallel inner loops behind a runtime-selected dispatch table.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2/FMA
// variant. The variants differ only in rounding (FMA contraction and lane-wise
// partial sums); tests/test_kernels.cpp pins their agreement. One table is
// active per process, so results are reproducible run to run on a given host.
namespace ulw::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  /// C[m x n] += A[m x k] * B[k x n], all row-major with explicit leading dims.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc);
  double (*dot)(const double* x, const double* y, std::size_t n);
  /// sum_i (x_i - y_i)^2
  double (*sum_sq_diff)(const double* x, const double* y, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

bool available(Isa isa);
Isa best_available();
std::optional<Isa> parse_isa(std::string_view name);

/// Table for a specific ISA. Throws EnvironmentError if the host lacks it.
const KernelTable& table(Isa isa);

/// The process-wide table. Defaults to best_available(), or to the value of
/// the ULW_ISA environment variable ("scalar" / "avx2") when set.
const KernelTable& active();
void set_active(Isa isa);

namespace detail {
extern const KernelTable scalar_table;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace ulw::kernels
