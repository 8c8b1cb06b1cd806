#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "arfc/tensor.hpp"

namespace arfc {

/// A leaf tensor whose analytic gradient is compared against central
/// finite differences.
struct GradProbe {
    std::string name;
    Tensor<double> tensor;
};

struct GradCheckOptions {
    double relative_step = 1e-4;  ///< h = relative_step * max(|x_i|, 1)
    double tolerance = 1e-4;      ///< max allowed relative error
    double abs_floor = 1e-6;      ///< denominator floor for near-zero gradients, scaled by h0/h on refinement
    std::size_t max_coords_per_probe = 48;  ///< random subset beyond this; 0 checks all
    std::uint64_t seed = 0x5eed;
    /// When x+h or x-h lands on a different smooth piece than x (see
    /// BranchTrace), retry with h/10 up to this many times. 0 disables.
    int kink_refinements = 4;
};

struct GradCheckReport {
    double max_rel_error = 0;
    std::string worst_coordinate;
    double worst_analytic = 0;
    double worst_numeric = 0;
    std::size_t coordinates = 0;
    std::size_t refined = 0;    ///< measured with a reduced step
    std::size_t nonsmooth = 0;  ///< no reduced step stayed on one piece; excluded
    bool passed = true;

    std::string summary() const;
};

/// Checks d<R, f()>/d(probe) for a fixed random projection R, where f
/// rebuilds the graph from the probes on every call. Probes are perturbed in
/// place and restored.
GradCheckReport check_gradients(const std::function<Tensor<double>()>& f, const std::vector<GradProbe>& probes,
                                const GradCheckOptions& options = {});

}  // namespace arfc
