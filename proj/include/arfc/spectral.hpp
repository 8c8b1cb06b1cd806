#pragma once

#include <vector>

#include "arfc/tensor.hpp"

namespace arfc {

enum class MaskKind { high_pass, low_pass, custom };

/// Real gain over the centered (DC-in-the-middle) 2-D spectrum of an h x w
/// plane. Row u corresponds to vertical frequency u - floor(h/2), column v to
/// horizontal frequency v - floor(w/2).
struct FrequencyMask {
    int h = 0;
    int w = 0;
    std::vector<double> values;
    double cutoff = 0;
    double center_u = 0;
    double center_v = 0;
    MaskKind kind = MaskKind::custom;

    double at(int u, int v) const { return values[static_cast<std::size_t>(u) * w + v]; }

    static FrequencyMask constant(int h, int w, double value);

    /// True when the gain at frequency f equals the gain at -f for every f,
    /// which makes the filter real-valued and self-adjoint.
    bool conjugate_symmetric(double tol = 1e-12) const;
};

enum class SpectralPath {
    automatic,  ///< radix-2 FFT when both extents are powers of two, else direct DFT
    direct,     ///< separable direct DFT
};

/// Per-plane spectral filtering: centered 2-D DFT, multiply by the mask,
/// inverse DFT, real part. Linear; the adjoint is the same filter.
/// Throws DimensionError on extent mismatch, ConfigError for a mask that is
/// not conjugate-symmetric.
template <typename T>
Tensor<T> dft2_filter(const Tensor<T>& x, const FrequencyMask& mask, SpectralPath path = SpectralPath::automatic);

/// Largest |imaginary part| left after the inverse transform of any plane of
/// x; a realness diagnostic for the filter.
template <typename T>
double dft2_filter_imaginary_residue(const Tensor<T>& x, const FrequencyMask& mask);

}  // namespace arfc
