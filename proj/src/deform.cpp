#include <cmath>

#include "arfc/ops.hpp"
#include "arfc/parallel.hpp"
#include "gemm.hpp"

namespace arfc {

namespace {

constexpr int kTaps = 9;

struct DeformGeometry {
    int n, cin, cout, h, w;
    int p() const { return h * w; }
    int k() const { return cin * kTaps; }
};

// Bilinear sampling positions for every (tap, pixel) of one sample. They do
// not depend on the input channel, so they are computed once per sample.
// Out-of-range corners get index 0 and valid 0.
template <typename T>
struct SamplePlan {
    std::vector<int> idx;    // [k][p][4]
    std::vector<T> valid;    // [k][p][4]
    std::vector<T> ly, lx;   // [k][p]

    SamplePlan(const DeformGeometry& g, const T* off)
        : idx(static_cast<std::size_t>(kTaps) * g.p() * 4),
          valid(idx.size()),
          ly(static_cast<std::size_t>(kTaps) * g.p()),
          lx(ly.size())
    {
        const int P = g.p();
        for (int k = 0; k < kTaps; ++k) {
            const int ki = k / 3 - 1;
            const int kj = k % 3 - 1;
            const T* dy = off + static_cast<std::size_t>(2 * k) * P;
            const T* dx = off + static_cast<std::size_t>(2 * k + 1) * P;
            for (int i = 0; i < g.h; ++i)
                for (int j = 0; j < g.w; ++j) {
                    const int p = i * g.w + j;
                    const std::size_t e = static_cast<std::size_t>(k) * P + p;
                    const double py = i + ki + static_cast<double>(dy[p]);
                    const double px = j + kj + static_cast<double>(dx[p]);
                    const double fy = std::floor(py);
                    const double fx = std::floor(px);
                    const int y0 = static_cast<int>(fy);
                    const int x0 = static_cast<int>(fx);
                    ly[e] = static_cast<T>(py - fy);
                    lx[e] = static_cast<T>(px - fx);
                    for (int q = 0; q < 4; ++q) {
                        const int y = y0 + q / 2;
                        const int x = x0 + q % 2;
                        const bool ok = y >= 0 && y < g.h && x >= 0 && x < g.w;
                        idx[e * 4 + q] = ok ? y * g.w + x : 0;
                        valid[e * 4 + q] = ok ? T(1) : T(0);
                    }
                }
        }
    }

    // Corner values v00, v01, v10, v11 of `plane` at entry e.
    void corners(const T* plane, std::size_t e, T v[4]) const
    {
        for (int q = 0; q < 4; ++q)
            v[q] = valid[e * 4 + q] * plane[idx[e * 4 + q]];
    }
};

// col[(ci * 9 + k), p] = m_k(p) * x_ci(p + p_k + offset_k(p))
template <typename T>
void deform_im2col(const DeformGeometry& g, const SamplePlan<T>& plan, const T* x, const T* mod, T* col)
{
    const int P = g.p();
    for (int ci = 0; ci < g.cin; ++ci) {
        const T* plane = x + static_cast<std::size_t>(ci) * P;
        for (int k = 0; k < kTaps; ++k) {
            const T* m = mod + static_cast<std::size_t>(k) * P;
            T* row = col + (static_cast<std::size_t>(ci) * kTaps + k) * P;
            for (int p = 0; p < P; ++p) {
                const std::size_t e = static_cast<std::size_t>(k) * P + p;
                T v[4];
                plan.corners(plane, e, v);
                const T ly = plan.ly[e];
                const T lx = plan.lx[e];
                row[p] = m[p] * ((1 - ly) * ((1 - lx) * v[0] + lx * v[1]) + ly * ((1 - lx) * v[2] + lx * v[3]));
            }
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> deform_conv2d(const Tensor<T>& x, const Tensor<T>& offsets, const Tensor<T>& modulation,
                        const Tensor<T>& weight, const Tensor<T>& bias)
{
    const Shape s = x.shape();
    if (offsets.shape() != Shape{s.n, 2 * kTaps, s.h, s.w})
        throw DimensionError("deform_conv2d: offsets shape " + offsets.shape().str());
    if (modulation.shape() != Shape{s.n, kTaps, s.h, s.w})
        throw DimensionError("deform_conv2d: modulation shape " + modulation.shape().str());
    const Shape ws = weight.shape();
    if (ws.c != s.c || ws.h != 3 || ws.w != 3)
        throw DimensionError("deform_conv2d: weight shape " + ws.str() + " for input " + s.str());
    if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1})
        throw DimensionError("deform_conv2d: bias shape " + bias.shape().str());

    const DeformGeometry g{s.n, s.c, ws.n, s.h, s.w};
    const std::size_t in_sample = static_cast<std::size_t>(g.cin) * g.p();
    const std::size_t out_sample = static_cast<std::size_t>(g.cout) * g.p();
    const std::size_t off_sample = static_cast<std::size_t>(2 * kTaps) * g.p();
    const std::size_t mod_sample = static_cast<std::size_t>(kTaps) * g.p();
    Tensor<T> out(Shape{s.n, g.cout, s.h, s.w});

#pragma omp parallel for num_threads(kernel_threads()) schedule(static) if (g.n > 1)
    for (int n = 0; n < g.n; ++n) {
        std::vector<T> col(static_cast<std::size_t>(g.k()) * g.p());
        const SamplePlan<T> plan(g, offsets.ptr() + n * off_sample);
        deform_im2col(g, plan, x.ptr() + n * in_sample, modulation.ptr() + n * mod_sample, col.data());
        T* os = out.ptr_mut() + n * out_sample;
        detail::gemm_nn(g.cout, g.p(), g.k(), weight.ptr(), col.data(), os);
        if (bias.defined())
            for (int co = 0; co < g.cout; ++co)
                for (int p = 0; p < g.p(); ++p)
                    os[static_cast<std::size_t>(co) * g.p() + p] += bias.ptr()[co];
    }
    detail::check_finite<T>(out.data(), "deform_conv2d");
    if (detail::branch_trace_active())
        for (int n = 0; n < g.n; ++n) {
            const SamplePlan<T> plan(g, offsets.ptr() + n * off_sample);
            for (const int i : plan.idx)
                detail::trace_branch(static_cast<std::uint64_t>(i));
            for (const T v : plan.valid)
                detail::trace_branch(v != T(0));
        }

    if (detail::needs_grad<T>({&x, &offsets, &modulation, &weight, &bias})) {
        detail::record<T>(out, "deform_conv2d", {x, offsets, modulation, weight, bias},
                          [=](const detail::TensorImpl<T>& res) {
            const int P = g.p();
            T* gx = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
            T* goff = offsets.requires_grad() ? detail::grad_of(offsets).data() : nullptr;
            T* gmod = modulation.requires_grad() ? detail::grad_of(modulation).data() : nullptr;
            const bool want_w = weight.requires_grad();
            const std::size_t wsize = weight.numel();
            std::vector<T> dw_parts(want_w ? wsize * g.n : 0, T(0));

#pragma omp parallel for num_threads(kernel_threads()) schedule(static) if (g.n > 1)
            for (int n = 0; n < g.n; ++n) {
                const T* xs = x.ptr() + n * in_sample;
                const T* offs = offsets.ptr() + n * off_sample;
                const T* mods = modulation.ptr() + n * mod_sample;
                const T* gs = res.grad.data() + n * out_sample;
                const std::size_t col_size = static_cast<std::size_t>(g.k()) * P;
                const SamplePlan<T> plan(g, offs);
                if (want_w) {
                    std::vector<T> col(col_size);
                    deform_im2col(g, plan, xs, mods, col.data());
                    detail::gemm_nt(g.cout, g.k(), P, gs, col.data(), dw_parts.data() + n * wsize);
                }
                if (!gx && !goff && !gmod)
                    continue;
                std::vector<T> dcol(col_size, T(0));
                detail::gemm_tn(g.k(), P, g.cout, weight.ptr(), gs, dcol.data());
                T* go = goff ? goff + n * off_sample : nullptr;
                T* gm_all = gmod ? gmod + n * mod_sample : nullptr;
                for (int ci = 0; ci < g.cin; ++ci) {
                    const T* plane = xs + static_cast<std::size_t>(ci) * P;
                    T* dplane = gx ? gx + n * in_sample + static_cast<std::size_t>(ci) * P : nullptr;
                    for (int k = 0; k < kTaps; ++k) {
                        const T* m = mods + static_cast<std::size_t>(k) * P;
                        const T* drow = dcol.data() + (static_cast<std::size_t>(ci) * kTaps + k) * P;
                        for (int p = 0; p < P; ++p) {
                            const T gc = drow[p];
                            if (gc == 0)
                                continue;
                            const std::size_t e = static_cast<std::size_t>(k) * P + p;
                            T v[4];
                            plan.corners(plane, e, v);
                            const T ly = plan.ly[e];
                            const T lx = plan.lx[e];
                            const T mv = m[p];
                            if (gm_all)
                                gm_all[e] += gc * ((1 - ly) * ((1 - lx) * v[0] + lx * v[1]) +
                                                   ly * ((1 - lx) * v[2] + lx * v[3]));
                            if (go) {
                                go[2 * static_cast<std::size_t>(k) * P + p] +=
                                    gc * mv * ((1 - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]));
                                go[(2 * static_cast<std::size_t>(k) + 1) * P + p] +=
                                    gc * mv * ((1 - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]));
                            }
                            if (dplane) {
                                const T gm = gc * mv;
                                const T wq[4] = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
                                for (int q = 0; q < 4; ++q)
                                    dplane[plan.idx[e * 4 + q]] += plan.valid[e * 4 + q] * gm * wq[q];
                            }
                        }
                    }
                }
            }
            if (want_w) {
                T* dw = detail::grad_of(weight).data();
                for (int n = 0; n < g.n; ++n)
                    for (std::size_t i = 0; i < wsize; ++i)
                        dw[i] += dw_parts[n * wsize + i];
            }
            if (bias.defined() && bias.requires_grad()) {
                T* db = detail::grad_of(bias).data();
                for (int n = 0; n < g.n; ++n)
                    for (int co = 0; co < g.cout; ++co) {
                        T acc = 0;
                        const T* row = res.grad.data() + n * out_sample + static_cast<std::size_t>(co) * P;
                        for (int p = 0; p < P; ++p)
                            acc += row[p];
                        db[co] += acc;
                    }
            }
        });
    }
    return out;
}

template Tensor<float> deform_conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, const Tensor<float>&);
template Tensor<double> deform_conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                      const Tensor<double>&, const Tensor<double>&);

}  // namespace arfc
