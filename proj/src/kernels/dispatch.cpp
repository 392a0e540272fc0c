#include "internal.hpp"

#include "odtmpc/errors.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace odtmpc::kernels {

namespace {

bool cpu_has_avx2() {
#if ODTMPC_HAVE_AVX2 && (defined(__x86_64__) || defined(__i386__))
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ODTMPC_ISA")) {
    const std::string want(env);
    if (want == "scalar") return &detail::kScalarTable;
    if (want == "avx2" && available(Isa::Avx2)) return &table(Isa::Avx2);
  }
  return available(Isa::Avx2) ? &table(Isa::Avx2) : &detail::kScalarTable;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{initial_table()};
  return ptr;
}

}  // namespace

bool available(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
      return cpu_has_avx2();
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& table(Isa isa) {
  if (!available(isa)) fail(Errc::InvalidArgument, "kernel variant '" + std::string(isa_name(isa)) + "' unavailable");
#if ODTMPC_HAVE_AVX2
  if (isa == Isa::Avx2) return detail::kAvx2Table;
#endif
  return detail::kScalarTable;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void select(Isa isa) { current().store(&table(isa), std::memory_order_release); }

}  // namespace odtmpc::kernels
