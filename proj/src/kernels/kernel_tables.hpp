#pragma once

#include "muviecast/kernels.hpp"

namespace muvie::kernels::detail {

const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif

}  // namespace muvie::kernels::detail
