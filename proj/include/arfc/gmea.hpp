#pragma once

#include <array>
#include <vector>

#include "arfc/nn.hpp"

namespace arfc {

/// Channel order after reshaping C into (groups, C/groups), transposing and
/// flattening: out[j * groups + k] = in[k * (C/groups) + j].
std::vector<int> shuffle_permutation(int channels, int groups);

/// Throws ConfigError when channels is not divisible by groups.
template <typename T>
Tensor<T> channel_shuffle(const Tensor<T>& x, int groups);

struct GmeaOptions {
    bool stem = true;  ///< 5x5 depthwise layer ahead of the strip convolutions
};

/// Global median enhancement attention.
///
///   F_CA = sig(MLP(avg F)) + sig(MLP(max F)) + sig(MLP(med F))   in (0, 3)
///   F_S  = shuffle(F_CA * F, 4)
///   F'   = conv1x1(sum_i D_i(stem(F_S))) * F_S
/// with D_i the depthwise strips 1x7, 7x1, 1x11, 11x1, 1x21, 21x1.
template <typename T>
class GmeaBlock : public nn::Module<T> {
public:
    GmeaBlock(int channels, Rng& rng, GmeaOptions options = {});

    Tensor<T> attention_map(const Tensor<T>& f) const;
    Tensor<T> channel_attention(const Tensor<T>& f) const;
    Tensor<T> spatial_attention(const Tensor<T>& fs) const;
    Tensor<T> forward(const Tensor<T>& f) const;

    nn::Mlp<T>& mlp() { return mlp_; }
    nn::Conv2d<T>& stem() { return stem_; }
    nn::Conv2d<T>& branch(int i) { return *branches_[i]; }
    nn::Conv2d<T>& out_conv() { return out_; }
    GmeaOptions& options() { return options_; }

    static constexpr int kShuffleGroups = 4;
    static constexpr std::array<std::array<int, 2>, 6> kStrips{{{1, 7}, {7, 1}, {1, 11}, {11, 1}, {1, 21}, {21, 1}}};

private:
    int channels_;
    GmeaOptions options_;
    nn::Mlp<T> mlp_;
    nn::Conv2d<T> stem_;
    nn::Conv2d<T> d1_;
    nn::Conv2d<T> d2_;
    nn::Conv2d<T> d3_;
    nn::Conv2d<T> d4_;
    nn::Conv2d<T> d5_;
    nn::Conv2d<T> d6_;
    std::array<nn::Conv2d<T>*, 6> branches_;
    nn::Conv2d<T> out_;
};

}  // namespace arfc
