#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernel_tables.hpp"

namespace muvie::kernels {
namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("MUVIECAST_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return detect_isa();
}

std::atomic<const KernelTable*>& active_table() {
  static std::atomic<const KernelTable*> t{&table_for(initial_isa())};
  return t;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(_M_X64)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() {
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

const KernelTable& table_for(Isa isa) {
  if (!isa_supported(isa))
    throw std::invalid_argument("kernel ISA not supported on this CPU: " +
                                std::string(isa_name(isa)));
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::kAvx2:
      return detail::avx2_table();
#endif
    default:
      return detail::scalar_table();
  }
}

Isa active_isa() { return active_table().load()->isa; }

void set_isa(Isa isa) { active_table().store(&table_for(isa)); }

const KernelTable& table() { return *active_table().load(); }

}  // namespace muvie::kernels
