#pragma once

namespace arfc {

/// Worker count for data-parallel kernels: ARFC_THREADS when set (>= 1),
/// otherwise the OpenMP default. Kernels partition work by output element
/// or by batch sample and reduce partial sums in a fixed order, so results
/// do not depend on this value.
int kernel_threads();

/// Overrides ARFC_THREADS for the rest of the process.
void set_kernel_threads(int threads);

}  // namespace arfc
