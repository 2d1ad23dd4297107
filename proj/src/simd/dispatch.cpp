#include <atomic>

#include "mfh/errors.hpp"
#include "mfh/simd/kernels.hpp"

namespace mfh::simd {

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
  return avx2_kernels() != nullptr && __builtin_cpu_supports("avx2") &&
         __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

std::atomic<int>& selected() {
  static std::atomic<int> s{avx2_available() ? static_cast<int>(Backend::avx2)
                                             : static_cast<int>(Backend::scalar)};
  return s;
}

}  // namespace

Backend active_backend() { return static_cast<Backend>(selected().load()); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_available())
    throw InvalidArgument("AVX2 backend requested but not supported on this CPU");
  selected().store(static_cast<int>(b));
}

const Kernels& kernels() {
  return active_backend() == Backend::avx2 ? *avx2_kernels() : scalar_kernels();
}

}  // namespace mfh::simd
