#include <algorithm>
#include <cstring>

#include "arfc/ops.hpp"
#include "arfc/parallel.hpp"
#include "gemm.hpp"

namespace arfc {

ConvSpec ConvSpec::same(int in_channels, int out_channels, int kernel_h, int kernel_w, int dilation, int groups,
                        bool bias)
{
    ConvSpec s;
    s.in_channels = in_channels;
    s.out_channels = out_channels;
    s.kernel_h = kernel_h;
    s.kernel_w = kernel_w;
    s.dilation = dilation;
    s.groups = groups;
    const int ph = dilation * (kernel_h - 1);
    const int pw = dilation * (kernel_w - 1);
    s.padding = {ph / 2, ph - ph / 2, pw / 2, pw - pw / 2};
    s.bias = bias;
    return s;
}

ConvSpec ConvSpec::pointwise(int in_channels, int out_channels, bool bias)
{
    return same(in_channels, out_channels, 1, 1, 1, 1, bias);
}

ConvSpec ConvSpec::depthwise(int channels, int kernel_h, int kernel_w, bool bias)
{
    return same(channels, channels, kernel_h, kernel_w, 1, channels, bias);
}

void ConvSpec::validate() const
{
    if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 || stride < 1 || dilation < 1 ||
        groups < 1)
        throw ConfigError("convolution extents, stride, dilation and groups must be positive");
    if (padding.top < 0 || padding.bottom < 0 || padding.left < 0 || padding.right < 0)
        throw ConfigError("negative convolution padding");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw ConfigError("channels (" + std::to_string(in_channels) + " -> " + std::to_string(out_channels) +
                          ") not divisible by groups " + std::to_string(groups));
}

std::pair<int, int> ConvSpec::output_hw(int h, int w) const
{
    const int ho = (h + padding.top + padding.bottom - dilation * (kernel_h - 1) - 1) / stride + 1;
    const int wo = (w + padding.left + padding.right - dilation * (kernel_w - 1) - 1) / stride + 1;
    const int span_h = h + padding.top + padding.bottom - dilation * (kernel_h - 1) - 1;
    const int span_w = w + padding.left + padding.right - dilation * (kernel_w - 1) - 1;
    if (span_h < 0 || span_w < 0 || ho < 1 || wo < 1)
        throw ConfigError("convolution output would be empty for input " + std::to_string(h) + "x" +
                          std::to_string(w));
    return {ho, wo};
}

namespace {

struct Geometry {
    int n, cin, h, w, cout, ho, wo, kh, kw, stride, dil, groups, pt, pl;
    int cin_g() const { return cin / groups; }
    int cout_g() const { return cout / groups; }
    int k() const { return cin_g() * kh * kw; }
    int p() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pt == 0 && pl == 0 && ho == h && wo == w; }
    bool depthwise() const { return groups == cin && cout == cin; }
};

template <typename T>
void im2col(const Geometry& g, const T* x, T* col)
{
    const int cin_g = g.cin_g();
    for (int ci = 0; ci < cin_g; ++ci) {
        const T* plane = x + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                T* row = col + (static_cast<std::size_t>(ci * g.kh + ki) * g.kw + kj) * g.p();
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pt + ki * g.dil;
                    T* dst = row + static_cast<std::size_t>(oy) * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    const int off = kj * g.dil - g.pl;
                    if (g.stride == 1) {
                        const int lo = std::clamp(-off, 0, g.wo);
                        const int hi = std::clamp(g.w - off, lo, g.wo);
                        std::fill(dst, dst + lo, T(0));
                        std::copy(src + lo + off, src + hi + off, dst + lo);
                        std::fill(dst + hi, dst + g.wo, T(0));
                    } else {
                        for (int ox = 0; ox < g.wo; ++ox) {
                            const int ix = ox * g.stride + off;
                            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const Geometry& g, const T* col, T* dx)
{
    const int cin_g = g.cin_g();
    for (int ci = 0; ci < cin_g; ++ci) {
        T* plane = dx + static_cast<std::size_t>(ci) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const T* row = col + (static_cast<std::size_t>(ci * g.kh + ki) * g.kw + kj) * g.p();
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pt + ki * g.dil;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    const T* src = row + static_cast<std::size_t>(oy) * g.wo;
                    T* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    const int off = kj * g.dil - g.pl;
                    if (g.stride == 1) {
                        const int lo = std::clamp(-off, 0, g.wo);
                        const int hi = std::clamp(g.w - off, lo, g.wo);
#pragma omp simd
                        for (int ox = lo; ox < hi; ++ox)
                            dst[ox + off] += src[ox];
                        continue;
                    }
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride + off;
                        if (ix >= 0 && ix < g.w)
                            dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_forward(const Geometry& g, const T* x, const T* w, T* out)
{
    for (int c = 0; c < g.cin; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        const T* kern = w + static_cast<std::size_t>(c) * g.kh * g.kw;
        T* o = out + static_cast<std::size_t>(c) * g.p();
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const T wv = kern[ki * g.kw + kj];
                const int off = kj * g.dil - g.pl;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pt + ki * g.dil;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    T* dst = o + static_cast<std::size_t>(oy) * g.wo;
                    if (g.stride == 1) {
                        const int lo = std::clamp(-off, 0, g.wo);
                        const int hi = std::clamp(g.w - off, lo, g.wo);
                        for (int ox = lo; ox < hi; ++ox)
                            dst[ox] += wv * src[ox + off];
                    } else {
                        for (int ox = 0; ox < g.wo; ++ox) {
                            const int ix = ox * g.stride + off;
                            if (ix >= 0 && ix < g.w)
                                dst[ox] += wv * src[ix];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_backward(const Geometry& g, const T* x, const T* w, const T* gout, T* dx, T* dw)
{
    for (int c = 0; c < g.cin; ++c) {
        const T* plane = x + static_cast<std::size_t>(c) * g.h * g.w;
        const T* kern = w + static_cast<std::size_t>(c) * g.kh * g.kw;
        const T* go = gout + static_cast<std::size_t>(c) * g.p();
        T* dplane = dx ? dx + static_cast<std::size_t>(c) * g.h * g.w : nullptr;
        T* dkern = dw ? dw + static_cast<std::size_t>(c) * g.kh * g.kw : nullptr;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const T wv = kern[ki * g.kw + kj];
                const int off = kj * g.dil - g.pl;
                T acc = 0;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pt + ki * g.dil;
                    if (iy < 0 || iy >= g.h)
                        continue;
                    const T* src = plane + static_cast<std::size_t>(iy) * g.w;
                    const T* gr = go + static_cast<std::size_t>(oy) * g.wo;
                    T* drow = dplane ? dplane + static_cast<std::size_t>(iy) * g.w : nullptr;
                    if (g.stride == 1) {
                        const int lo = std::clamp(-off, 0, g.wo);
                        const int hi = std::clamp(g.w - off, lo, g.wo);
                        T row_acc = 0;
#pragma omp simd reduction(+ : row_acc)
                        for (int ox = lo; ox < hi; ++ox)
                            row_acc += gr[ox] * src[ox + off];
                        acc += row_acc;
                        if (drow) {
#pragma omp simd
                            for (int ox = lo; ox < hi; ++ox)
                                drow[ox + off] += wv * gr[ox];
                        }
                        continue;
                    }
                    for (int ox = 0; ox < g.wo; ++ox) {
                        const int ix = ox * g.stride + off;
                        if (ix < 0 || ix >= g.w)
                            continue;
                        acc += gr[ox] * src[ix];
                        if (drow)
                            drow[ix] += wv * gr[ox];
                    }
                }
                if (dkern)
                    dkern[ki * g.kw + kj] += acc;
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvSpec& spec, const Tensor<T>& weight, const Tensor<T>& bias)
{
    spec.validate();
    const Shape& in = input.shape();
    if (in.c != spec.in_channels)
        throw DimensionError("conv2d: input has " + std::to_string(in.c) + " channels, spec expects " +
                             std::to_string(spec.in_channels));
    if (weight.shape() != spec.weight_shape())
        throw DimensionError("conv2d: weight shape " + weight.shape().str() + " does not match spec " +
                             spec.weight_shape().str());
    if (bias.defined() && bias.shape() != Shape{1, spec.out_channels, 1, 1})
        throw DimensionError("conv2d: bias shape " + bias.shape().str());
    const auto [ho, wo] = spec.output_hw(in.h, in.w);

    const Geometry g{in.n,          in.c,        in.h,           in.w,        spec.out_channels,
                     ho,            wo,          spec.kernel_h,  spec.kernel_w, spec.stride,
                     spec.dilation, spec.groups, spec.padding.top, spec.padding.left};

    Tensor<T> out(Shape{in.n, g.cout, ho, wo});
    const std::size_t in_sample = static_cast<std::size_t>(in.c) * in.h * in.w;
    const std::size_t out_sample = static_cast<std::size_t>(g.cout) * g.p();
    const T* x = input.ptr();
    const T* w = weight.ptr();
    T* o = out.ptr_mut();

#pragma omp parallel for num_threads(kernel_threads()) schedule(static) if (g.n > 1)
    for (int s = 0; s < g.n; ++s) {
        const T* xs = x + s * in_sample;
        T* os = o + s * out_sample;
        if (g.depthwise()) {
            depthwise_forward(g, xs, w, os);
        } else {
            std::vector<T> col;
            if (!g.pointwise())
                col.resize(static_cast<std::size_t>(g.k()) * g.p());
            for (int gr = 0; gr < g.groups; ++gr) {
                const T* xg = xs + static_cast<std::size_t>(gr) * g.cin_g() * g.h * g.w;
                const T* src = xg;
                if (!g.pointwise()) {
                    im2col(g, xg, col.data());
                    src = col.data();
                }
                detail::gemm_nn(g.cout_g(), g.p(), g.k(), w + static_cast<std::size_t>(gr) * g.cout_g() * g.k(), src,
                                os + static_cast<std::size_t>(gr) * g.cout_g() * g.p());
            }
        }
        if (bias.defined()) {
            const T* b = bias.ptr();
            for (int co = 0; co < g.cout; ++co) {
                T* row = os + static_cast<std::size_t>(co) * g.p();
                for (int p = 0; p < g.p(); ++p)
                    row[p] += b[co];
            }
        }
    }
    detail::check_finite<T>(out.data(), "conv2d");

    if (detail::needs_grad<T>({&input, &weight, &bias})) {
        detail::record<T>(out, "conv2d", {input, weight, bias}, [input, weight, bias, g, in_sample, out_sample](
                                                                     const detail::TensorImpl<T>& res) {
            const T* gout = res.grad.data();
            const bool want_x = input.requires_grad();
            const bool want_w = weight.requires_grad();
            T* dx = want_x ? detail::grad_of(input).data() : nullptr;
            const std::size_t wsize = weight.numel();
            // Per-sample weight partials, reduced in sample order.
            std::vector<T> dw_parts(want_w ? wsize * g.n : 0, T(0));
            const T* x = input.ptr();
            const T* w = weight.ptr();

#pragma omp parallel for num_threads(kernel_threads()) schedule(static) if (g.n > 1)
            for (int s = 0; s < g.n; ++s) {
                const T* xs = x + s * in_sample;
                const T* gs = gout + s * out_sample;
                T* dxs = dx ? dx + s * in_sample : nullptr;
                T* dws = want_w ? dw_parts.data() + s * wsize : nullptr;
                if (g.depthwise()) {
                    depthwise_backward(g, xs, w, gs, dxs, dws);
                    continue;
                }
                std::vector<T> col;
                std::vector<T> dcol;
                const std::size_t col_size = static_cast<std::size_t>(g.k()) * g.p();
                if (!g.pointwise()) {
                    if (dws)
                        col.resize(col_size);
                    if (dxs)
                        dcol.resize(col_size);
                }
                for (int gr = 0; gr < g.groups; ++gr) {
                    const T* xg = xs + static_cast<std::size_t>(gr) * g.cin_g() * g.h * g.w;
                    const T* gg = gs + static_cast<std::size_t>(gr) * g.cout_g() * g.p();
                    const T* wg = w + static_cast<std::size_t>(gr) * g.cout_g() * g.k();
                    if (dws) {
                        const T* src = xg;
                        if (!g.pointwise()) {
                            im2col(g, xg, col.data());
                            src = col.data();
                        }
                        detail::gemm_nt(g.cout_g(), g.k(), g.p(), gg, src,
                                        dws + static_cast<std::size_t>(gr) * g.cout_g() * g.k());
                    }
                    if (dxs) {
                        T* dxg = dxs + static_cast<std::size_t>(gr) * g.cin_g() * g.h * g.w;
                        if (g.pointwise()) {
                            detail::gemm_tn(g.k(), g.p(), g.cout_g(), wg, gg, dxg);
                        } else {
                            std::fill(dcol.begin(), dcol.end(), T(0));
                            detail::gemm_tn(g.k(), g.p(), g.cout_g(), wg, gg, dcol.data());
                            col2im(g, dcol.data(), dxg);
                        }
                    }
                }
            }
            if (want_w) {
                T* dw = detail::grad_of(weight).data();
                for (int s = 0; s < g.n; ++s)
                    for (std::size_t i = 0; i < wsize; ++i)
                        dw[i] += dw_parts[s * wsize + i];
            }
            if (bias.defined() && bias.requires_grad()) {
                T* db = detail::grad_of(bias).data();
                for (int s = 0; s < g.n; ++s)
                    for (int co = 0; co < g.cout; ++co) {
                        const T* row = gout + s * out_sample + static_cast<std::size_t>(co) * g.p();
                        T acc = 0;
                        for (int p = 0; p < g.p(); ++p)
                            acc += row[p];
                        db[co] += acc;
                    }
            }
        });
    }
    return out;
}

template Tensor<float> conv2d(const Tensor<float>&, const ConvSpec&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> conv2d(const Tensor<double>&, const ConvSpec&, const Tensor<double>&, const Tensor<double>&);

}  // namespace arfc
