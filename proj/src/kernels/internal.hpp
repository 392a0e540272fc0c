#pragma once

#include "odtmpc/kernels.hpp"

namespace odtmpc::kernels::detail {

extern const KernelTable kScalarTable;
#if ODTMPC_HAVE_AVX2
extern const KernelTable kAvx2Table;
#endif

}  // namespace odtmpc::kernels::detail
