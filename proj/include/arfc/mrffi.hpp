#pragma once

#include <array>
#include <optional>

#include "arfc/nn.hpp"

namespace arfc {

/// Multi-scale dilated branch: three 3x3 conv-BN-ReLU lanes at dilations
/// 1, 2, 3 (C_in -> C_out/4 each), a global-average lane (1x1 conv + ReLU,
/// broadcast back over the plane), then a 1x1 conv-BN-ReLU fuse to C_out.
template <typename T>
class Msdc : public nn::Module<T> {
public:
    Msdc(int in_channels, int out_channels, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x);

    nn::ConvBnRelu<T>& lane(int k) { return *lanes_[k]; }
    nn::Conv2d<T>& gap_conv() { return gap_conv_; }
    nn::ConvBnRelu<T>& fuse() { return fuse_; }
    int mid_channels() const { return mid_; }

    static constexpr std::array<int, 3> kDilations{1, 2, 3};

private:
    int mid_;
    nn::ConvBnRelu<T> lane1_;
    nn::ConvBnRelu<T> lane2_;
    nn::ConvBnRelu<T> lane3_;
    std::array<nn::ConvBnRelu<T>*, 3> lanes_;
    nn::Conv2d<T> gap_conv_;
    nn::ConvBnRelu<T> fuse_;
};

/// Modulated deformable 3x3 branch. Offsets (18 channels, (dy, dx) per tap)
/// and modulation logits (9 channels) come from zero-initialized 3x3 convs,
/// so a fresh branch behaves as 0.5 x a regular convolution.
template <typename T>
class Dcn : public nn::Module<T> {
public:
    Dcn(int in_channels, int out_channels, Rng& rng);
    /// Deformable aggregation before BN/ReLU.
    Tensor<T> aggregate(const Tensor<T>& x) const;
    Tensor<T> forward(const Tensor<T>& x);

    nn::Conv2d<T>& offset_conv() { return offset_conv_; }
    nn::Conv2d<T>& modulation_conv() { return modulation_conv_; }
    Tensor<T>& weight() { return *weight_; }
    Tensor<T>& bias() { return *bias_; }
    nn::BatchNorm2d<T>& bn() { return bn_; }

private:
    nn::Conv2d<T> offset_conv_;
    nn::Conv2d<T> modulation_conv_;
    Tensor<T>* weight_;
    Tensor<T>* bias_;
    nn::BatchNorm2d<T> bn_;
};

/// Five taps of a difference kernel, offsets (dy, dx).
using TapSet = std::array<std::array<int, 2>, 5>;
inline constexpr TapSet kTapsHV{{{-1, 0}, {0, -1}, {0, 0}, {0, 1}, {1, 0}}};
inline constexpr TapSet kTapsDG{{{-1, -1}, {-1, 1}, {0, 0}, {1, -1}, {1, 1}}};

/// Folds difference taps into an ordinary 3x3 kernel: tap weights at their
/// positions, center = w(0,0) - sum of all five tap weights. Inputs are
/// (C_out, C_in, 1, 5) in kTapsHV / kTapsDG order; output (C_out, C_in, 3, 3).
template <typename T>
Tensor<T> difference_kernel(const Tensor<T>& hv, const Tensor<T>& dg);

/// Multi-directional difference branch:
///   y(p0) = sum_{p in S_HV} w_hv(p) (x(p0+p) - x(p0)) + sum_{p in S_DG} w_dg(p) (x(p0+p) - x(p0))
/// evaluated as one 3x3 convolution with the folded kernel over an
/// edge-replicated input, so constant inputs give exactly zero everywhere.
template <typename T>
class Mddc : public nn::Module<T> {
public:
    Mddc(int in_channels, int out_channels, Rng& rng);
    Tensor<T> aggregate(const Tensor<T>& x) const;
    Tensor<T> forward(const Tensor<T>& x);
    Tensor<T> kernel() const { return difference_kernel(*hv_, *dg_); }

    Tensor<T>& hv_weights() { return *hv_; }
    Tensor<T>& dg_weights() { return *dg_; }
    nn::BatchNorm2d<T>& bn() { return bn_; }

private:
    int in_;
    int out_;
    Tensor<T>* hv_;
    Tensor<T>* dg_;
    nn::BatchNorm2d<T> bn_;
};

/// avgpool -> FC -> ReLU -> FC -> 3 scores -> softmax, one triple per sample.
template <typename T>
class GatedUnit : public nn::Module<T> {
public:
    GatedUnit(int in_channels, int hidden, Rng& rng);
    /// Raw scores g(x), (N, 3, 1, 1).
    Tensor<T> scores(const Tensor<T>& x) const;
    /// softmax(g(x)), (N, 3, 1, 1).
    Tensor<T> forward(const Tensor<T>& x) const;
    nn::Mlp<T>& mlp() { return mlp_; }

private:
    nn::Mlp<T> mlp_;
};

struct MrffiOptions {
    int gate_hidden = 16;
};

/// Y = sum_i G(x)_i * expert_i(x) over MSDC, DCN, MDDC.
template <typename T>
class Mrffi : public nn::Module<T> {
public:
    Mrffi(int in_channels, int out_channels, Rng& rng, MrffiOptions options = {});
    Tensor<T> forward(const Tensor<T>& x);
    /// Gate weights that forward() would use for x (pinned or computed).
    Tensor<T> gate_weights(const Tensor<T>& x) const;

    /// Replaces the learned gate by fixed weights; nullopt restores it.
    void pin_gate(std::optional<std::array<double, 3>> weights) { pinned_ = weights; }

    Msdc<T>& msdc() { return msdc_; }
    Dcn<T>& dcn() { return dcn_; }
    Mddc<T>& mddc() { return mddc_; }
    GatedUnit<T>& gate() { return gate_; }

private:
    Msdc<T> msdc_;
    Dcn<T> dcn_;
    Mddc<T> mddc_;
    GatedUnit<T> gate_;
    std::optional<std::array<double, 3>> pinned_;
};

}  // namespace arfc
