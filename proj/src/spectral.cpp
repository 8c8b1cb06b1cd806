#include "arfc/spectral.hpp"

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace arfc {

FrequencyMask FrequencyMask::constant(int h, int w, double value)
{
    FrequencyMask m;
    m.h = h;
    m.w = w;
    m.values.assign(static_cast<std::size_t>(h) * w, value);
    m.center_u = h / 2;
    m.center_v = w / 2;
    m.kind = MaskKind::custom;
    return m;
}

bool FrequencyMask::conjugate_symmetric(double tol) const
{
    const int cu = h / 2;
    const int cv = w / 2;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const int mu = ((2 * cu - u) % h + h) % h;
            const int mv = ((2 * cv - v) % w + w) % w;
            if (std::abs(at(u, v) - at(mu, mv)) > tol)
                return false;
        }
    return true;
}

namespace {

using cd = std::complex<double>;

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// 1-D transform along a strided line. Either an iterative radix-2 FFT or a
// direct O(n^2) DFT with a precomputed twiddle table.
class LineTransform {
public:
    LineTransform(int n, bool fft) : n_(n), fft_(fft && power_of_two(n))
    {
        twiddle_.resize(n);
        for (int k = 0; k < n; ++k)
            twiddle_[k] = std::polar(1.0, -2.0 * std::numbers::pi * k / n);
        if (fft_) {
            rev_.resize(n);
            int bits = 0;
            while ((1 << bits) < n)
                ++bits;
            for (int i = 0; i < n; ++i) {
                int r = 0;
                for (int b = 0; b < bits; ++b)
                    if (i & (1 << b))
                        r |= 1 << (bits - 1 - b);
                rev_[i] = r;
            }
        }
    }

    // In-place forward (inverse == false) or unnormalized inverse transform.
    void run(cd* line, bool inverse, std::vector<cd>& scratch) const
    {
        if (fft_)
            fft(line, inverse);
        else
            dft(line, inverse, scratch);
    }

private:
    cd w(std::size_t k, bool inverse) const { return inverse ? std::conj(twiddle_[k]) : twiddle_[k]; }

    void dft(cd* line, bool inverse, std::vector<cd>& scratch) const
    {
        scratch.assign(line, line + n_);
        for (int k = 0; k < n_; ++k) {
            cd acc = 0;
            for (int j = 0; j < n_; ++j)
                acc += scratch[j] * w(static_cast<std::size_t>(j) * k % n_, inverse);
            line[k] = acc;
        }
    }

    void fft(cd* line, bool inverse) const
    {
        for (int i = 0; i < n_; ++i)
            if (i < rev_[i])
                std::swap(line[i], line[rev_[i]]);
        for (int len = 2; len <= n_; len <<= 1) {
            const int step = n_ / len;
            for (int i = 0; i < n_; i += len)
                for (int j = 0; j < len / 2; ++j) {
                    const cd t = w(static_cast<std::size_t>(j) * step, inverse) * line[i + j + len / 2];
                    const cd u = line[i + j];
                    line[i + j] = u + t;
                    line[i + j + len / 2] = u - t;
                }
        }
    }

    int n_;
    bool fft_;
    std::vector<cd> twiddle_;
    std::vector<int> rev_;
};

struct Plan {
    int h, w;
    LineTransform rows;
    LineTransform cols;
    Plan(int h_, int w_, bool fft) : h(h_), w(w_), rows(w_, fft), cols(h_, fft) {}
};

const Plan& plan_for(int h, int w, bool fft)
{
    static std::mutex mutex;
    static std::map<std::tuple<int, int, bool>, std::unique_ptr<Plan>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[{h, w, fft}];
    if (!slot)
        slot = std::make_unique<Plan>(h, w, fft);
    return *slot;
}

void transform2d(const Plan& plan, std::vector<cd>& buf, bool inverse)
{
    std::vector<cd> scratch;
    std::vector<cd> column(plan.h);
    for (int i = 0; i < plan.h; ++i)
        plan.rows.run(buf.data() + static_cast<std::size_t>(i) * plan.w, inverse, scratch);
    for (int j = 0; j < plan.w; ++j) {
        for (int i = 0; i < plan.h; ++i)
            column[i] = buf[static_cast<std::size_t>(i) * plan.w + j];
        plan.cols.run(column.data(), inverse, scratch);
        for (int i = 0; i < plan.h; ++i)
            buf[static_cast<std::size_t>(i) * plan.w + j] = column[i];
    }
}

// Gain in natural (unshifted) frequency order.
std::vector<double> natural_gain(const FrequencyMask& mask)
{
    std::vector<double> g(mask.values.size());
    const int cu = mask.h / 2;
    const int cv = mask.w / 2;
    for (int k = 0; k < mask.h; ++k)
        for (int l = 0; l < mask.w; ++l)
            g[static_cast<std::size_t>(k) * mask.w + l] = mask.at((k + cu) % mask.h, (l + cv) % mask.w);
    return g;
}

template <typename T>
double filter_planes(const T* in, T* out, std::size_t planes, int h, int w, const std::vector<double>& gain,
                     const Plan& plan)
{
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double norm = 1.0 / static_cast<double>(plane);
    double residue = 0;
    std::vector<cd> buf(plane);
    for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t i = 0; i < plane; ++i)
            buf[i] = cd(static_cast<double>(in[pl * plane + i]), 0.0);
        transform2d(plan, buf, false);
        for (std::size_t i = 0; i < plane; ++i)
            buf[i] *= gain[i];
        transform2d(plan, buf, true);
        for (std::size_t i = 0; i < plane; ++i) {
            out[pl * plane + i] = static_cast<T>(buf[i].real() * norm);
            residue = std::max(residue, std::abs(buf[i].imag() * norm));
        }
    }
    return residue;
}

void check_mask(const Shape& s, const FrequencyMask& mask)
{
    if (mask.h != s.h || mask.w != s.w || mask.values.size() != s.plane())
        throw DimensionError("dft2_filter: mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                             " does not match input " + s.str());
    if (!mask.conjugate_symmetric(1e-9))
        throw ConfigError("dft2_filter: mask is not symmetric about the spectral center");
}

}  // namespace

template <typename T>
Tensor<T> dft2_filter(const Tensor<T>& x, const FrequencyMask& mask, SpectralPath path)
{
    const Shape s = x.shape();
    check_mask(s, mask);
    const Plan& plan = plan_for(s.h, s.w, path == SpectralPath::automatic);
    auto gain = std::make_shared<const std::vector<double>>(natural_gain(mask));
    const std::size_t planes = static_cast<std::size_t>(s.n) * s.c;
    Tensor<T> out(s);
    filter_planes(x.ptr(), out.ptr_mut(), planes, s.h, s.w, *gain, plan);
    detail::check_finite<T>(out.data(), "dft2_filter");
    if (detail::needs_grad<T>({&x}))
        detail::record<T>(out, "dft2_filter", {x}, [x, gain, &plan, planes, s](const detail::TensorImpl<T>& res) {
            std::vector<T> filtered(res.grad.size());
            filter_planes(res.grad.data(), filtered.data(), planes, s.h, s.w, *gain, plan);
            auto d = detail::grad_of(x);
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += filtered[i];
        });
    return out;
}

template <typename T>
double dft2_filter_imaginary_residue(const Tensor<T>& x, const FrequencyMask& mask)
{
    const Shape s = x.shape();
    check_mask(s, mask);
    const Plan& plan = plan_for(s.h, s.w, true);
    std::vector<T> scratch(x.numel());
    return filter_planes(x.ptr(), scratch.data(), static_cast<std::size_t>(s.n) * s.c, s.h, s.w,
                         natural_gain(mask), plan);
}

template Tensor<float> dft2_filter(const Tensor<float>&, const FrequencyMask&, SpectralPath);
template Tensor<double> dft2_filter(const Tensor<double>&, const FrequencyMask&, SpectralPath);
template double dft2_filter_imaginary_residue(const Tensor<float>&, const FrequencyMask&);
template double dft2_filter_imaginary_residue(const Tensor<double>&, const FrequencyMask&);

}  // namespace arfc
