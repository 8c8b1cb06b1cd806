#pragma once

#include <span>
#include <vector>

#include "arfc/tensor.hpp"

namespace arfc {

struct Padding {
    int top = 0;
    int bottom = 0;
    int left = 0;
    int right = 0;

    static Padding uniform(int p) { return {p, p, p, p}; }
    friend bool operator==(const Padding&, const Padding&) = default;
};

/// Geometry of one 2-D convolution layer.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    Padding padding = Padding::uniform(1);
    bool bias = true;

    /// Stride-1 "same" convolution: output spatial size equals input size.
    static ConvSpec same(int in_channels, int out_channels, int kernel_h, int kernel_w, int dilation = 1,
                         int groups = 1, bool bias = true);
    static ConvSpec pointwise(int in_channels, int out_channels, bool bias = true);
    static ConvSpec depthwise(int channels, int kernel_h, int kernel_w, bool bias = true);

    /// Throws ConfigError on non-positive extents or indivisible groups.
    void validate() const;
    /// Output (rows, cols); throws ConfigError when either would be < 1.
    std::pair<int, int> output_hw(int h, int w) const;
    Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
};

/// Cross-correlation with zero padding. `bias` may be an undefined tensor;
/// when defined it has shape (1, out_channels, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight,
                 const Tensor<T>& bias = {});

enum class PoolKind { max, avg };

/// 2x2 window, stride 2. Odd extents are replicate-padded on the bottom/right.
template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind);

enum class GlobalPoolKind { avg, max, median };

/// Reduces each channel plane to one value: output (N, C, 1, 1). The median
/// of an even-length plane is the mean of the two middle order statistics.
template <typename T>
Tensor<T> global_pool(const Tensor<T>& input, GlobalPoolKind kind);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Softmax across the channel axis at every (n, h, w).
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x);

/// Per-channel normalization over (N, H, W). In training mode the batch
/// statistics are used and folded into the running buffers with
/// `running = momentum * running + (1 - momentum) * batch` (unbiased variance);
/// otherwise the running buffers are used. gamma/beta/running are (1, C, 1, 1).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, double momentum = 0.9, double eps = 1e-5);

/// Per-sample normalization over (C, H, W) with a per-channel affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
/// Sums same-shaped tensors.
template <typename T>
Tensor<T> sum(const std::vector<Tensor<T>>& terms);

/// x * g where g is (N, C, 1, 1) or (N, 1, 1, 1), broadcast over the rest.
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& g);
/// Repeats a (N, C, 1, 1) tensor over an h x w plane.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& g, int h, int w);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count);
/// out[:, i] = x[:, perm[i]]
template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, std::span<const int> perm);

/// Bilinear x2 resize, half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x);

/// Edge-replicating pad.
template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, Padding pad);

/// Sum of x * weights over all elements, as a (1, 1, 1, 1) tensor. The
/// weights are constants.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights);

/// Modulated deformable 3x3 convolution (stride 1, padding 1, dilation 1).
///
/// offsets is (N, 18, H, W) holding (dy, dx) for tap k at channels (2k, 2k+1),
/// taps ordered row-major over the 3x3 grid. modulation is (N, 9, H, W).
/// Each tap samples x at p0 + p_k + offset_k by bilinear interpolation with
/// zeros outside the image, scales by its modulation and projects with
/// weight (Cout, Cin, 3, 3).
template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& modulation,
                        const Tensor<T>& weight, const Tensor<T>& bias = {});

}  // namespace arfc
