#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace arfc {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// 64-bit central-difference checks at relative step 1e-4, tolerance 1e-4:
/// conv2d, dft2_filter, deformable conv (offsets included), MDDC, MRFFIConv,
/// WFED, HLFF, GMEA, soft_iou_loss and a small full network at 16x16.
std::vector<CheckResult> run_gradient_suite(std::uint64_t seed = 7);

/// Fast module oracles: wavelet round trip, frequency masks, MDDC
/// reparameterization, degenerate DCN, gate contract, metrics, loss.
std::vector<CheckResult> run_selftest(std::uint64_t seed = 7);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace arfc
