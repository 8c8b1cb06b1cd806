#pragma once

#include <array>

#include "arfc/nn.hpp"

namespace arfc {

/// High-low feature fusion for one skip connection.
///
/// The deeper map is aligned to the shallow one (depthwise 3x3, pointwise
/// C_high -> C_low, bilinear x2). Both are cut into four channel groups;
/// group i of each is concatenated (high first), layer-normalized and passed
/// through a 3x3 conv with dilation {1, 2, 5, 7}[i] back to C_low/4 channels.
/// The four results are concatenated, layer-normalized and mixed by a 1x1 conv.
template <typename T>
class HlffBlock : public nn::Module<T> {
public:
    HlffBlock(int low_channels, int high_channels, Rng& rng);

    /// Aligned high-level map, same shape as the low-level input.
    Tensor<T> align(const Tensor<T>& high) const;
    Tensor<T> forward(const Tensor<T>& low, const Tensor<T>& high) const;

    nn::Conv2d<T>& align_dw() { return dw_; }
    nn::Conv2d<T>& align_pw() { return pw_; }
    nn::Conv2d<T>& group_conv(int i) { return *groups_[i]; }
    nn::LayerNorm2d<T>& group_norm() { return ln_group_; }
    nn::LayerNorm2d<T>& out_norm() { return ln_out_; }
    nn::Conv2d<T>& out_proj() { return out_; }

    static constexpr std::array<int, 4> kDilations{1, 2, 5, 7};

private:
    int low_;
    int high_;
    nn::Conv2d<T> dw_;
    nn::Conv2d<T> pw_;
    nn::Conv2d<T> g1_;
    nn::Conv2d<T> g2_;
    nn::Conv2d<T> g3_;
    nn::Conv2d<T> g4_;
    std::array<nn::Conv2d<T>*, 4> groups_;
    nn::LayerNorm2d<T> ln_group_;
    nn::LayerNorm2d<T> ln_out_;
    nn::Conv2d<T> out_;
};

}  // namespace arfc
