#include <algorithm>
#include <cmath>
#include <numeric>

#include "arfc/ops.hpp"

namespace arfc {

template <typename T>
Tensor<T> pool2d(const Tensor<T>& input, PoolKind kind)
{
    const Shape s = input.shape();
    if (s.h < 1 || s.w < 1)
        throw DimensionError("pool2d: empty spatial extent " + s.str());
    const int ho = (s.h + 1) / 2;
    const int wo = (s.w + 1) / 2;
    Tensor<T> out(Shape{s.n, s.c, ho, wo});
    // Flat source index of each of the four window taps; replicate padding
    // repeats the last row/column.
    std::vector<std::size_t> taps(out.numel() * 4);
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t pl = 0; pl < planes; ++pl)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const std::size_t o = (pl * ho + oy) * wo + ox;
                int k = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int iy = std::min(2 * oy + dy, s.h - 1);
                        const int ix = std::min(2 * ox + dx, s.w - 1);
                        taps[o * 4 + k++] = (pl * s.h + iy) * s.w + ix;
                    }
            }
    const T* x = input.ptr();
    std::vector<std::size_t> argmax;
    if (kind == PoolKind::max)
        argmax.resize(out.numel());
    for (std::size_t o = 0; o < out.numel(); ++o) {
        const std::size_t* t = &taps[o * 4];
        if (kind == PoolKind::max) {
            std::size_t best = t[0];
            for (int k = 1; k < 4; ++k)
                if (x[t[k]] > x[best])
                    best = t[k];
            argmax[o] = best;
            out.ptr_mut()[o] = x[best];
        } else {
            out.ptr_mut()[o] = (x[t[0]] + x[t[1]] + x[t[2]] + x[t[3]]) * T(0.25);
        }
    }
    if (detail::branch_trace_active())
        for (std::size_t a : argmax)
            detail::trace_branch(a);
    if (detail::needs_grad<T>({&input})) {
        if (kind == PoolKind::max)
            detail::record<T>(out, "maxpool2d", {input}, [input, argmax](const detail::TensorImpl<T>& res) {
                auto d = detail::grad_of(input);
                for (std::size_t o = 0; o < argmax.size(); ++o)
                    d[argmax[o]] += res.grad[o];
            });
        else
            detail::record<T>(out, "avgpool2d", {input}, [input, taps](const detail::TensorImpl<T>& res) {
                auto d = detail::grad_of(input);
                for (std::size_t o = 0; o < res.grad.size(); ++o)
                    for (int k = 0; k < 4; ++k)
                        d[taps[o * 4 + k]] += res.grad[o] * T(0.25);
            });
    }
    return out;
}

template <typename T>
Tensor<T> global_pool(const Tensor<T>& input, GlobalPoolKind kind)
{
    const Shape s = input.shape();
    if (s.h < 1 || s.w < 1)
        throw DimensionError("global_pool: empty spatial extent " + s.str());
    const std::size_t plane = s.plane();
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    // For max/median: plane-relative indices that receive gradient.
    std::vector<std::size_t> picks;
    const T* x = input.ptr();
    std::vector<std::size_t> order(plane);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* v = x + pl * plane;
        switch (kind) {
        case GlobalPoolKind::avg: {
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p)
                acc += v[p];
            out.ptr_mut()[pl] = acc / static_cast<T>(plane);
            break;
        }
        case GlobalPoolKind::max: {
            std::size_t best = 0;
            for (std::size_t p = 1; p < plane; ++p)
                if (v[p] > v[best])
                    best = p;
            picks.push_back(best);
            out.ptr_mut()[pl] = v[best];
            break;
        }
        case GlobalPoolKind::median: {
            std::iota(order.begin(), order.end(), std::size_t{0});
            auto less = [v](std::size_t a, std::size_t b) { return v[a] < v[b] || (v[a] == v[b] && a < b); };
            const std::size_t hi = plane / 2;
            std::nth_element(order.begin(), order.begin() + hi, order.end(), less);
            const std::size_t upper = order[hi];
            if (plane % 2 == 1) {
                picks.push_back(upper);
                picks.push_back(upper);
                out.ptr_mut()[pl] = v[upper];
            } else {
                const std::size_t lower = *std::max_element(order.begin(), order.begin() + hi, less);
                picks.push_back(lower);
                picks.push_back(upper);
                out.ptr_mut()[pl] = (v[lower] + v[upper]) * T(0.5);
            }
            break;
        }
        }
    }
    if (detail::branch_trace_active())
        for (std::size_t a : picks)
            detail::trace_branch(a);
    if (detail::needs_grad<T>({&input})) {
        detail::record<T>(out, "global_pool", {input}, [input, kind, plane, picks](const detail::TensorImpl<T>& res) {
            auto d = detail::grad_of(input);
            for (std::size_t pl = 0; pl < res.grad.size(); ++pl) {
                const T g = res.grad[pl];
                T* dp = d.data() + pl * plane;
                switch (kind) {
                case GlobalPoolKind::avg:
                    for (std::size_t p = 0; p < plane; ++p)
                        dp[p] += g / static_cast<T>(plane);
                    break;
                case GlobalPoolKind::max:
                    dp[picks[pl]] += g;
                    break;
                case GlobalPoolKind::median:
                    dp[picks[2 * pl]] += g * T(0.5);
                    dp[picks[2 * pl + 1]] += g * T(0.5);
                    break;
                }
            }
        });
    }
    return out;
}

namespace {

struct LerpTap {
    int i0;
    int i1;
    double frac;
};

// Half-pixel-center source coordinates for an exact x2 resize.
std::vector<LerpTap> upsample_taps(int in, int out)
{
    std::vector<LerpTap> taps(out);
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * 0.5 - 0.5;
        if (src < 0)
            src = 0;
        const int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x)
{
    const Shape s = x.shape();
    if (s.h < 1 || s.w < 1)
        throw DimensionError("bilinear_upsample2x: empty spatial extent");
    const int ho = 2 * s.h;
    const int wo = 2 * s.w;
    const auto ty = upsample_taps(s.h, ho);
    const auto tx = upsample_taps(s.w, wo);
    Tensor<T> out(Shape{s.n, s.c, ho, wo});
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = x.ptr() + pl * s.plane();
        T* dst = out.ptr_mut() + pl * static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
            const T fy = static_cast<T>(ty[oy].frac);
            const T* r0 = src + static_cast<std::size_t>(ty[oy].i0) * s.w;
            const T* r1 = src + static_cast<std::size_t>(ty[oy].i1) * s.w;
            for (int ox = 0; ox < wo; ++ox) {
                const T fx = static_cast<T>(tx[ox].frac);
                const int a = tx[ox].i0;
                const int b = tx[ox].i1;
                const T top = r0[a] * (T(1) - fx) + r0[b] * fx;
                const T bot = r1[a] * (T(1) - fx) + r1[b] * fx;
                dst[static_cast<std::size_t>(oy) * wo + ox] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "bilinear_upsample2x", {x},
                          [x, s, ho, wo, ty, tx, planes](const detail::TensorImpl<T>& res) {
                              T* d = detail::grad_of(x).data();
                              for (std::size_t pl = 0; pl < planes; ++pl) {
                                  T* dp = d + pl * s.plane();
                                  const T* g = res.grad.data() + pl * static_cast<std::size_t>(ho) * wo;
                                  for (int oy = 0; oy < ho; ++oy) {
                                      const T fy = static_cast<T>(ty[oy].frac);
                                      T* r0 = dp + static_cast<std::size_t>(ty[oy].i0) * s.w;
                                      T* r1 = dp + static_cast<std::size_t>(ty[oy].i1) * s.w;
                                      for (int ox = 0; ox < wo; ++ox) {
                                          const T fx = static_cast<T>(tx[ox].frac);
                                          const T gv = g[static_cast<std::size_t>(oy) * wo + ox];
                                          r0[tx[ox].i0] += gv * (T(1) - fy) * (T(1) - fx);
                                          r0[tx[ox].i1] += gv * (T(1) - fy) * fx;
                                          r1[tx[ox].i0] += gv * fy * (T(1) - fx);
                                          r1[tx[ox].i1] += gv * fy * fx;
                                      }
                                  }
                              }
                          });
    return out;
}

template <typename T>
Tensor<T> pad_replicate(const Tensor<T>& x, Padding pad)
{
    const Shape s = x.shape();
    if (s.h < 1 || s.w < 1 || pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0)
        throw DimensionError("pad_replicate: invalid input or padding");
    const int ho = s.h + pad.top + pad.bottom;
    const int wo = s.w + pad.left + pad.right;
    Tensor<T> out(Shape{s.n, s.c, ho, wo});
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    auto src_index = [&](int oy, int ox) {
        const int iy = std::clamp(oy - pad.top, 0, s.h - 1);
        const int ix = std::clamp(ox - pad.left, 0, s.w - 1);
        return static_cast<std::size_t>(iy) * s.w + ix;
    };
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* src = x.ptr() + pl * s.plane();
        T* dst = out.ptr_mut() + pl * static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox)
                dst[static_cast<std::size_t>(oy) * wo + ox] = src[src_index(oy, ox)];
    }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "pad_replicate", {x}, [x, s, pad, ho, wo, planes](const detail::TensorImpl<T>& res) {
            T* d = detail::grad_of(x).data();
            for (std::size_t pl = 0; pl < planes; ++pl) {
                T* dp = d + pl * s.plane();
                const T* g = res.grad.data() + pl * static_cast<std::size_t>(ho) * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = std::clamp(oy - pad.top, 0, s.h - 1);
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = std::clamp(ox - pad.left, 0, s.w - 1);
                        dp[static_cast<std::size_t>(iy) * s.w + ix] += g[static_cast<std::size_t>(oy) * wo + ox];
                    }
                }
            }
        });
    return out;
}

#define ARFC_INSTANTIATE(T)                                                 \
    template Tensor<T> pool2d(const Tensor<T>&, PoolKind);                  \
    template Tensor<T> global_pool(const Tensor<T>&, GlobalPoolKind);       \
    template Tensor<T> bilinear_upsample2x(const Tensor<T>&);               \
    template Tensor<T> pad_replicate(const Tensor<T>&, Padding);

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)
#undef ARFC_INSTANTIATE

}  // namespace arfc
