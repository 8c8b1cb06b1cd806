#include <algorithm>
#include <cmath>

#include "arfc/ops.hpp"

namespace arfc {

namespace {

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
}

template <typename T>
T stable_sigmoid(T v)
{
    if (v >= 0) {
        const T e = std::exp(-v);
        return T(1) / (T(1) + e);
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x)
{
    Tensor<T> out(x.shape());
    const auto in = x.data();
    auto o = out.data_mut();
    for (std::size_t i = 0; i < in.size(); ++i)
        o[i] = in[i] > T(0) ? in[i] : T(0);
    detail::check_finite<T>(out.data(), "relu");
    if (detail::branch_trace_active()) {
        std::uint64_t bits = 1;
        for (std::size_t i = 0; i < in.size(); ++i) {
            bits = bits << 1 | (in[i] > T(0) ? 1u : 0u);
            if (i % 63 == 62 || i + 1 == in.size()) {
                detail::trace_branch(bits);
                bits = 1;
            }
        }
    }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "relu", {x}, [x](const detail::TensorImpl<T>& res) {
            auto dx = detail::grad_of(x);
            const auto in = x.data();
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (in[i] > T(0))
                    dx[i] += res.grad[i];
        });
    return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x)
{
    Tensor<T> out(x.shape());
    const auto in = x.data();
    auto o = out.data_mut();
    for (std::size_t i = 0; i < in.size(); ++i)
        o[i] = stable_sigmoid(in[i]);
    detail::check_finite<T>(out.data(), "sigmoid");
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "sigmoid", {x}, [x](const detail::TensorImpl<T>& res) {
            auto dx = detail::grad_of(x);
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const T s = res.data[i];
                dx[i] += res.grad[i] * s * (T(1) - s);
            }
        });
    return out;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x)
{
    const Shape s = x.shape();
    Tensor<T> out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
            T m = x.data()[base];
            for (int c = 1; c < s.c; ++c)
                m = std::max(m, x.data()[base + c * plane]);
            T total = 0;
            for (int c = 0; c < s.c; ++c) {
                const T e = std::exp(x.data()[base + c * plane] - m);
                out.data_mut()[base + c * plane] = e;
                total += e;
            }
            for (int c = 0; c < s.c; ++c)
                out.data_mut()[base + c * plane] /= total;
        }
    detail::check_finite<T>(out.data(), "softmax");
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "softmax", {x}, [x, s, plane](const detail::TensorImpl<T>& res) {
            auto dx = detail::grad_of(x);
            for (int n = 0; n < s.n; ++n)
                for (std::size_t p = 0; p < plane; ++p) {
                    const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
                    T dot = 0;
                    for (int c = 0; c < s.c; ++c)
                        dot += res.grad[base + c * plane] * res.data[base + c * plane];
                    for (int c = 0; c < s.c; ++c) {
                        const std::size_t i = base + c * plane;
                        dx[i] += res.data[i] * (res.grad[i] - dot);
                    }
                }
        });
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same(a, b, "add");
    Tensor<T> out(a.shape());
    auto o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = a.data()[i] + b.data()[i];
    detail::check_finite<T>(out.data(), "add");
    if (detail::needs_grad<T>({&a, &b}))
        detail::record<T>(out, "add", {a, b}, [a, b](const detail::TensorImpl<T>& res) {
            for (const Tensor<T>* t : {&a, &b}) {
                if (!t->requires_grad())
                    continue;
                auto d = detail::grad_of(*t);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += res.grad[i];
            }
        });
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same(a, b, "sub");
    Tensor<T> out(a.shape());
    auto o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = a.data()[i] - b.data()[i];
    detail::check_finite<T>(out.data(), "sub");
    if (detail::needs_grad<T>({&a, &b}))
        detail::record<T>(out, "sub", {a, b}, [a, b](const detail::TensorImpl<T>& res) {
            if (a.requires_grad()) {
                auto d = detail::grad_of(a);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += res.grad[i];
            }
            if (b.requires_grad()) {
                auto d = detail::grad_of(b);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] -= res.grad[i];
            }
        });
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    require_same(a, b, "mul");
    Tensor<T> out(a.shape());
    auto o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = a.data()[i] * b.data()[i];
    detail::check_finite<T>(out.data(), "mul");
    if (detail::needs_grad<T>({&a, &b}))
        detail::record<T>(out, "mul", {a, b}, [a, b](const detail::TensorImpl<T>& res) {
            if (a.requires_grad()) {
                auto d = detail::grad_of(a);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += res.grad[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto d = detail::grad_of(b);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += res.grad[i] * a.data()[i];
            }
        });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor)
{
    Tensor<T> out(x.shape());
    auto o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = x.data()[i] * factor;
    detail::check_finite<T>(out.data(), "scale");
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "scale", {x}, [x, factor](const detail::TensorImpl<T>& res) {
            auto d = detail::grad_of(x);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += res.grad[i] * factor;
        });
    return out;
}

template <typename T>
Tensor<T> sum(const std::vector<Tensor<T>>& terms)
{
    if (terms.empty())
        throw DimensionError("sum: no terms");
    Tensor<T> out(terms[0].shape());
    auto o = out.data_mut();
    bool grad = false;
    for (const Tensor<T>& t : terms) {
        require_same(terms[0], t, "sum");
        for (std::size_t i = 0; i < o.size(); ++i)
            o[i] += t.data()[i];
        grad = grad || detail::needs_grad<T>({&t});
    }
    detail::check_finite<T>(out.data(), "sum");
    if (grad) {
        std::vector<Tensor<T>> inputs(terms.begin(), terms.end());
        detail::record<T>(out, "sum", inputs, [inputs](const detail::TensorImpl<T>& res) {
            for (const Tensor<T>& t : inputs) {
                if (!t.requires_grad())
                    continue;
                auto d = detail::grad_of(t);
                for (std::size_t i = 0; i < d.size(); ++i)
                    d[i] += res.grad[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& x, const Tensor<T>& g)
{
    const Shape s = x.shape();
    const Shape gs = g.shape();
    if (gs.n != s.n || gs.h != 1 || gs.w != 1 || (gs.c != s.c && gs.c != 1))
        throw DimensionError("mul_broadcast: gate " + gs.str() + " incompatible with " + s.str());
    Tensor<T> out(s);
    const std::size_t plane = s.plane();
    auto o = out.data_mut();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T gv = g.data()[static_cast<std::size_t>(n) * gs.c + (gs.c == 1 ? 0 : c)];
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            for (std::size_t p = 0; p < plane; ++p)
                o[base + p] = x.data()[base + p] * gv;
        }
    detail::check_finite<T>(out.data(), "mul_broadcast");
    if (detail::needs_grad<T>({&x, &g}))
        detail::record<T>(out, "mul_broadcast", {x, g}, [x, g, s, gs, plane](const detail::TensorImpl<T>& res) {
            T* dx = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
            T* dg = g.requires_grad() ? detail::grad_of(g).data() : nullptr;
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t gi = static_cast<std::size_t>(n) * gs.c + (gs.c == 1 ? 0 : c);
                    const T gv = g.data()[gi];
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    T acc = 0;
                    for (std::size_t p = 0; p < plane; ++p) {
                        if (dx)
                            dx[base + p] += res.grad[base + p] * gv;
                        acc += res.grad[base + p] * x.data()[base + p];
                    }
                    if (dg)
                        dg[gi] += acc;
                }
        });
    return out;
}

template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& g, int h, int w)
{
    const Shape gs = g.shape();
    if (gs.h != 1 || gs.w != 1 || h < 1 || w < 1)
        throw DimensionError("broadcast_spatial: expected (N, C, 1, 1), got " + gs.str());
    Tensor<T> out(Shape{gs.n, gs.c, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    auto o = out.data_mut();
    for (std::size_t i = 0; i < g.numel(); ++i)
        std::fill(o.begin() + i * plane, o.begin() + (i + 1) * plane, g.data()[i]);
    if (detail::needs_grad<T>({&g}))
        detail::record<T>(out, "broadcast_spatial", {g}, [g, plane](const detail::TensorImpl<T>& res) {
            auto d = detail::grad_of(g);
            for (std::size_t i = 0; i < d.size(); ++i) {
                T acc = 0;
                for (std::size_t p = 0; p < plane; ++p)
                    acc += res.grad[i * plane + p];
                d[i] += acc;
            }
        });
    return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts)
{
    if (parts.empty())
        throw DimensionError("concat_channels: no inputs");
    Shape s = parts[0].shape();
    s.c = 0;
    bool grad = false;
    for (const Tensor<T>& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
            throw DimensionError("concat_channels: " + ps.str() + " does not align with " + parts[0].shape().str());
        s.c += ps.c;
        grad = grad || detail::needs_grad<T>({&p});
    }
    Tensor<T> out(s);
    const std::size_t plane = s.plane();
    auto o = out.data_mut();
    for (int n = 0; n < s.n; ++n) {
        std::size_t dst = static_cast<std::size_t>(n) * s.c * plane;
        for (const Tensor<T>& p : parts) {
            const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
            const T* src = p.ptr() + n * len;
            std::copy(src, src + len, o.begin() + dst);
            dst += len;
        }
    }
    if (grad) {
        std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
        detail::record<T>(out, "concat_channels", inputs, [inputs, s, plane](const detail::TensorImpl<T>& res) {
            for (int n = 0; n < s.n; ++n) {
                std::size_t src = static_cast<std::size_t>(n) * s.c * plane;
                for (const Tensor<T>& p : inputs) {
                    const std::size_t len = static_cast<std::size_t>(p.shape().c) * plane;
                    if (p.requires_grad()) {
                        T* d = detail::grad_of(p).data() + n * len;
                        for (std::size_t i = 0; i < len; ++i)
                            d[i] += res.grad[src + i];
                    }
                    src += len;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count)
{
    const Shape s = x.shape();
    if (begin < 0 || count < 1 || begin + count > s.c)
        throw DimensionError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                             ") outside " + std::to_string(s.c) + " channels");
    Tensor<T> out(Shape{s.n, count, s.h, s.w});
    const std::size_t plane = s.plane();
    const std::size_t len = static_cast<std::size_t>(count) * plane;
    for (int n = 0; n < s.n; ++n) {
        const T* src = x.ptr() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
        std::copy(src, src + len, out.ptr_mut() + n * len);
    }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "slice_channels", {x}, [x, s, begin, len, plane](const detail::TensorImpl<T>& res) {
            T* d = detail::grad_of(x).data();
            for (int n = 0; n < s.n; ++n) {
                T* dst = d + (static_cast<std::size_t>(n) * s.c + begin) * plane;
                for (std::size_t i = 0; i < len; ++i)
                    dst[i] += res.grad[n * len + i];
            }
        });
    return out;
}

template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, std::span<const int> perm)
{
    const Shape s = x.shape();
    if (static_cast<int>(perm.size()) != s.c)
        throw DimensionError("permute_channels: permutation length differs from channel count");
    std::vector<char> hit(s.c, 0);
    for (int p : perm) {
        if (p < 0 || p >= s.c || hit[p])
            throw DimensionError("permute_channels: not a permutation");
        hit[p] = 1;
    }
    std::vector<int> order(perm.begin(), perm.end());
    Tensor<T> out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* src = x.ptr() + (static_cast<std::size_t>(n) * s.c + order[c]) * plane;
            std::copy(src, src + plane, out.ptr_mut() + (static_cast<std::size_t>(n) * s.c + c) * plane);
        }
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "permute_channels", {x}, [x, s, order, plane](const detail::TensorImpl<T>& res) {
            T* d = detail::grad_of(x).data();
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    T* dst = d + (static_cast<std::size_t>(n) * s.c + order[c]) * plane;
                    const T* src = res.grad.data() + (static_cast<std::size_t>(n) * s.c + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p)
                        dst[p] += src[p];
                }
        });
    return out;
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights)
{
    if (weights.size() != x.numel())
        throw DimensionError("weighted_sum: weight count differs from element count");
    T acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        acc += x.data()[i] * weights[i];
    Tensor<T> out(Shape{1, 1, 1, 1}, acc);
    detail::check_finite<T>(out.data(), "weighted_sum");
    if (detail::needs_grad<T>({&x})) {
        std::vector<T> wv(weights.begin(), weights.end());
        detail::record<T>(out, "weighted_sum", {x}, [x, wv](const detail::TensorImpl<T>& res) {
            auto d = detail::grad_of(x);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += res.grad[0] * wv[i];
        });
    }
    return out;
}

#define ARFC_INSTANTIATE(T)                                                                  \
    template Tensor<T> relu(const Tensor<T>&);                                               \
    template Tensor<T> sigmoid(const Tensor<T>&);                                            \
    template Tensor<T> softmax_channels(const Tensor<T>&);                                   \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                           \
    template Tensor<T> sum(const std::vector<Tensor<T>>&);                                      \
    template Tensor<T> mul_broadcast(const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> broadcast_spatial(const Tensor<T>&, int, int);                        \
    template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                          \
    template Tensor<T> slice_channels(const Tensor<T>&, int, int);                           \
    template Tensor<T> permute_channels(const Tensor<T>&, std::span<const int>);             \
    template Tensor<T> weighted_sum(const Tensor<T>&, const std::vector<T>&);

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)
#undef ARFC_INSTANTIATE

}  // namespace arfc
