#include <cstdlib>
#include <string>

#include "spinefuse/errors.hpp"
#include "spinefuse/kernels.hpp"

namespace spinefuse::kernels {

#if defined(SPINEFUSE_WITH_AVX2)
const Ops& avx2_ops_impl();  // defined in kernels_avx2.cpp
#endif

const Ops* avx2_ops() {
#if defined(SPINEFUSE_WITH_AVX2)
  return &avx2_ops_impl();
#else
  return nullptr;
#endif
}

bool avx2_usable() {
#if defined(SPINEFUSE_WITH_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const Ops& select_ops() {
  const char* forced = std::getenv("SPINEFUSE_KERNEL");
  if (forced != nullptr) {
    const std::string name(forced);
    if (name == "scalar") return scalar_ops();
    if (name == "avx2") {
      if (!avx2_usable())
        throw param_error("SPINEFUSE_KERNEL=avx2 but AVX2 kernels are unavailable");
      return *avx2_ops();
    }
    throw param_error("unknown SPINEFUSE_KERNEL value: " + name);
  }
  return avx2_usable() ? *avx2_ops() : scalar_ops();
}

}  // namespace

const Ops& active_ops() {
  static const Ops& ops = select_ops();
  return ops;
}

}  // namespace spinefuse::kernels
