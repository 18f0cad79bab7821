#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "btx/kernels/kernels.hpp"

namespace btx::kernels {

bool avx2_compiled();

namespace {

bool cpu_has_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  Isa isa = detected_isa();
  if (const char* env = std::getenv("BTX_ISA")) {
    const std::string_view want(env);
    if (want == "scalar") {
      isa = Isa::scalar;
    } else if (want == "avx2" && isa_supported(Isa::avx2)) {
      isa = Isa::avx2;
    }
  }
  return isa;
}

std::atomic<Isa>& active_slot() {
  static std::atomic<Isa> slot{initial_isa()};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2: {
      static const bool ok = avx2_compiled() && cpu_has_avx2();
      return ok;
    }
  }
  return false;
}

Isa detected_isa() { return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel ISA not supported on this machine: " +
                                std::string(isa_name(isa)));
  }
  active_slot().store(isa, std::memory_order_relaxed);
}

template <typename T>
const KernelTable<T>& table(Isa isa) {
  if (isa == Isa::avx2) {
    if (const auto* t = avx2_table<T>()) return *t;
  }
  return scalar_table<T>();
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);

}  // namespace btx::kernels
