#include <atomic>
#include <cstdlib>

#include <fmt/format.h>

#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"

namespace ulw::kernels {
namespace {

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ULW_ISA")) {
    if (auto isa = parse_isa(env); isa && available(*isa)) return &table(*isa);
  }
  return &table(best_available());
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> t{initial_table()};
  return t;
}

}  // namespace

bool available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa best_available() { return available(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

std::optional<Isa> parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  return std::nullopt;
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) throw EnvironmentError("requested SIMD kernels are not supported on this CPU");
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2) return detail::avx2_table;
#endif
  return detail::scalar_table;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_active(Isa isa) { current().store(&table(isa), std::memory_order_release); }

}  // namespace ulw::kernels
