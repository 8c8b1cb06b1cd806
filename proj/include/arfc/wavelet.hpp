#pragma once

#include <map>
#include <tuple>
#include <utility>

#include "arfc/nn.hpp"
#include "arfc/spectral.hpp"

namespace arfc {

/// One level of the unnormalized 2-D Haar transform. For the 2x2 block
/// [[a, b], [c, d]]:
///   ll = a + b + c + d    lh = (a + c) - (b + d)
///   hl = (a + b) - (c + d)    hh = (a + d) - (b + c)
template <typename T>
struct WaveletSubbands {
    Tensor<T> ll;
    Tensor<T> lh;
    Tensor<T> hl;
    Tensor<T> hh;
    int source_h = 0;
    int source_w = 0;

    /// All four bands stacked along channels: [ll | lh | hl | hh].
    Tensor<T> f1() const;
    /// Approximation band only.
    Tensor<T> f2() const { return ll; }
};

/// Throws DimensionError for odd extents.
template <typename T>
WaveletSubbands<T> haar_analyze(const Tensor<T>& x);

/// Exact inverse of haar_analyze, full resolution.
template <typename T>
Tensor<T> haar_synthesize(const WaveletSubbands<T>& s);

/// Top-left sample of every synthesized 2x2 block, (ll + lh + hl + hh) / 4,
/// at half resolution.
template <typename T>
Tensor<T> haar_fuse_downsampled(const WaveletSubbands<T>& s);

/// Test hook: flips the sign of the lh term in haar_synthesize.
void set_synthesis_fault(bool enabled);

/// Gaussian high-pass / low-pass gains about the spectrum center
/// (floor(h/2), floor(w/2)) with cutoff D0 = max(floor(max(h, w) / 20), 1).
///   high_pass: 0 for D < D0, 1 - exp(-D0^2 / D^2) otherwise
///   low_pass:  exp(-D^2 / D0^2) for D <= D0, 1 otherwise
FrequencyMask build_mask(MaskKind kind, int h, int w);

/// Squeeze-excitation: x * sigmoid(MLP(avgpool(x))), hidden width max(C/4, 1).
template <typename T>
class SqueezeExcite : public nn::Module<T> {
public:
    SqueezeExcite(int channels, Rng& rng);
    Tensor<T> gate(const Tensor<T>& x) const;
    Tensor<T> forward(const Tensor<T>& x) const;
    nn::Mlp<T>& mlp() { return mlp_; }

private:
    nn::Mlp<T> mlp_;
};

/// Pixel attention: x * sigmoid(conv1x1(x)).
template <typename T>
class PixelAttention : public nn::Module<T> {
public:
    PixelAttention(int channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;
    nn::Conv2d<T>& conv() { return conv_; }

private:
    nn::Conv2d<T> conv_;
};

struct WfedOptions {
    bool frequency_filter = true;  ///< false replaces both masks with the identity
    bool low_sigmoid = true;       ///< extra sigmoid after the low-band SE
};

/// Wavelet frequency-enhanced downsampling, (N, C, H, W) -> (N, C, H/2, W/2).
///
///   f    = conv3x3(x)
///   high = HP(cat(lh, hl, hh))                      3C channels
///   F_h  = cat(mix_se(SE(high)), mix_pa(PA(high)))  3C/2 + 3C/2
///   F_l  = sigmoid(SE(LP(ll)))                      C
///   out  = fuse(ll := F_l, lh|hl|hh := F_h) + maxpool(x)
template <typename T>
class WfedBlock : public nn::Module<T> {
public:
    WfedBlock(int channels, Rng& rng, WfedOptions options = {});
    Tensor<T> forward(const Tensor<T>& x);

    int channels() const { return channels_; }
    const WfedOptions& options() const { return options_; }
    void set_options(const WfedOptions& options) { options_ = options; }

    nn::Conv2d<T>& entry_conv() { return entry_; }
    SqueezeExcite<T>& se_high() { return se_high_; }
    SqueezeExcite<T>& se_low() { return se_low_; }
    PixelAttention<T>& pa_high() { return pa_high_; }
    nn::Conv2d<T>& mix_se() { return mix_se_; }
    nn::Conv2d<T>& mix_pa() { return mix_pa_; }

private:
    const FrequencyMask& mask(MaskKind kind, int h, int w);

    int channels_;
    WfedOptions options_;
    nn::Conv2d<T> entry_;
    SqueezeExcite<T> se_high_;
    SqueezeExcite<T> se_low_;
    PixelAttention<T> pa_high_;
    nn::Conv2d<T> mix_se_;
    nn::Conv2d<T> mix_pa_;
    std::map<std::tuple<int, int, int>, FrequencyMask> masks_;
};

}  // namespace arfc
