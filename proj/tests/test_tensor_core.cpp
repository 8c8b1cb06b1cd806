#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include "arfc/gradcheck.hpp"
#include "arfc/ops.hpp"
#include "arfc/serialize.hpp"
#include "arfc/spectral.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace arfc;
using testing::adjoint_gap;
using testing::max_abs_diff;
using testing::naive_conv;
using testing::random_tensor;

TEST_CASE("conv2d counts taps on a constant input")
{
    Tensor<double> x(Shape{1, 1, 3, 3}, 1.0);
    Tensor<double> w(Shape{1, 1, 3, 3}, 1.0);
    const auto y = conv2d(x, ConvSpec::same(1, 1, 3, 3, 1, 1, false), w);
    CHECK(y(0, 0, 1, 1) == 9.0);
    CHECK(y(0, 0, 0, 0) == 4.0);
    CHECK(y(0, 0, 0, 1) == 6.0);
}

TEST_CASE("conv2d with an identity kernel returns the input")
{
    Rng rng(1);
    const auto x = random_tensor(Shape{2, 3, 5, 7}, rng);
    Tensor<double> w(Shape{3, 1, 3, 3});
    for (int c = 0; c < 3; ++c)
        w.at(c, 0, 1, 1) = 1.0;
    const auto y = conv2d(x, ConvSpec::depthwise(3, 3, 3, false), w);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d matches the nested-loop oracle")
{
    Rng rng(2);
    SUBCASE("dilation 2, pad 2")
    {
        const auto x = random_tensor(Shape{1, 2, 8, 8}, rng);
        ConvSpec s = ConvSpec::same(2, 3, 3, 3, 2);
        const auto w = random_tensor(s.weight_shape(), rng);
        const auto b = random_tensor(Shape{1, 3, 1, 1}, rng);
        CHECK(max_abs_diff(conv2d(x, s, w, b), naive_conv(x, s, w, b)) < 1e-6);
    }
    SUBCASE("sweep over dilations, strides and groups")
    {
        for (int d : {1, 2, 3, 5, 7})
            for (int stride : {1, 2})
                for (bool depthwise : {false, true}) {
                    const int c = 4;
                    ConvSpec s = ConvSpec::same(c, depthwise ? c : 6, 3, 3, d, depthwise ? c : 1);
                    s.stride = stride;
                    const auto x = random_tensor(Shape{2, c, 11, 9}, rng);
                    const auto w = random_tensor(s.weight_shape(), rng);
                    const auto b = random_tensor(Shape{1, s.out_channels, 1, 1}, rng);
                    CAPTURE(d);
                    CAPTURE(stride);
                    CAPTURE(depthwise);
                    CHECK(max_abs_diff(conv2d(x, s, w, b), naive_conv(x, s, w, b)) < 1e-6);
                }
    }
    SUBCASE("strip and pointwise kernels")
    {
        const auto x = random_tensor(Shape{1, 4, 6, 5}, rng);
        for (auto [kh, kw] : {std::pair{1, 21}, std::pair{21, 1}, std::pair{1, 1}, std::pair{5, 5}}) {
            ConvSpec s = ConvSpec::depthwise(4, kh, kw);
            const auto w = random_tensor(s.weight_shape(), rng);
            CHECK(max_abs_diff(conv2d(x, s, w), naive_conv(x, s, w)) < 1e-6);
        }
        ConvSpec p = ConvSpec::pointwise(4, 7);
        const auto w = random_tensor(p.weight_shape(), rng);
        CHECK(max_abs_diff(conv2d(x, p, w), naive_conv(x, p, w)) < 1e-6);
    }
    SUBCASE("asymmetric padding")
    {
        ConvSpec s = ConvSpec::same(2, 2, 3, 3);
        s.padding = {1, 1, 0, 2};
        const auto x = random_tensor(Shape{1, 2, 5, 6}, rng);
        const auto w = random_tensor(s.weight_shape(), rng);
        CHECK(max_abs_diff(conv2d(x, s, w), naive_conv(x, s, w)) < 1e-6);
    }
}

TEST_CASE("conv2d rejects bad shapes and empty outputs")
{
    Tensor<double> x(Shape{1, 2, 4, 4});
    ConvSpec s = ConvSpec::same(3, 2, 3, 3);
    CHECK_THROWS_AS(conv2d(x, s, Tensor<double>(s.weight_shape())), DimensionError);
    ConvSpec ok = ConvSpec::same(2, 2, 3, 3);
    CHECK_THROWS_AS(conv2d(x, ok, Tensor<double>(Shape{2, 2, 5, 5})), DimensionError);
    ConvSpec big = ok;
    big.kernel_h = big.kernel_w = 9;
    big.padding = {};
    CHECK_THROWS_AS(conv2d(x, big, Tensor<double>(big.weight_shape())), ConfigError);
    ConvSpec grouped = ConvSpec::same(2, 3, 3, 3, 1, 2);
    CHECK_THROWS_AS(grouped.validate(), ConfigError);
}

TEST_CASE("pool2d on a 2x2 block")
{
    Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(pool2d(x, PoolKind::max)(0, 0, 0, 0) == 4.0);
    CHECK(pool2d(x, PoolKind::avg)(0, 0, 0, 0) == 2.5);
}

TEST_CASE("pool2d matches a window scan")
{
    Rng rng(3);
    const auto x = random_tensor(Shape{1, 1, 6, 6}, rng);
    const auto mx = pool2d(x, PoolKind::max);
    const auto av = pool2d(x, PoolKind::avg);
    REQUIRE(mx.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double a = x(0, 0, 2 * i, 2 * j), b = x(0, 0, 2 * i, 2 * j + 1);
            const double c = x(0, 0, 2 * i + 1, 2 * j), d = x(0, 0, 2 * i + 1, 2 * j + 1);
            CHECK(mx(0, 0, i, j) == std::max({a, b, c, d}));
            CHECK(av(0, 0, i, j) == doctest::Approx((a + b + c + d) / 4).epsilon(1e-15));
        }
}

TEST_CASE("pool2d replicates the last row and column of odd inputs")
{
    Tensor<double> x(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto av = pool2d(x, PoolKind::avg);
    REQUIRE(av.shape() == Shape{1, 1, 2, 2});
    CHECK(av(0, 0, 0, 1) == doctest::Approx((3 + 3 + 6 + 6) / 4.0));
    CHECK(av(0, 0, 1, 1) == 9.0);
    CHECK_THROWS_AS(pool2d(Tensor<double>(Shape{1, 1, 0, 4}), PoolKind::max), DimensionError);
}

TEST_CASE("max pooling routes the gradient to the argmax only")
{
    Tensor<double> x(Shape{1, 1, 2, 2}, {1, 7, 3, 4});
    x.set_requires_grad(true);
    pool2d(x, PoolKind::max).backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
    CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("global median uses the middle order statistics")
{
    Tensor<double> odd(Shape{1, 1, 1, 5}, {4, 100, 1, 3, 2});
    Tensor<double> even(Shape{1, 1, 2, 2}, {4, 1, 3, 2});
    CHECK(global_pool(odd, GlobalPoolKind::median)(0, 0, 0, 0) == 3.0);
    CHECK(global_pool(even, GlobalPoolKind::median)(0, 0, 0, 0) == 2.5);
}

TEST_CASE("global pooling matches a full sort")
{
    Rng rng(4);
    for (int hw : {5, 6}) {
        const auto x = random_tensor(Shape{2, 3, hw, hw + 1}, rng);
        const auto avg = global_pool(x, GlobalPoolKind::avg);
        const auto mx = global_pool(x, GlobalPoolKind::max);
        const auto med = global_pool(x, GlobalPoolKind::median);
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c) {
                std::vector<double> v;
                for (int i = 0; i < hw; ++i)
                    for (int j = 0; j < hw + 1; ++j)
                        v.push_back(x(n, c, i, j));
                std::sort(v.begin(), v.end());
                const std::size_t m = v.size();
                const double median = m % 2 ? v[m / 2] : (v[m / 2 - 1] + v[m / 2]) / 2;
                double total = 0;
                for (double e : v)
                    total += e;
                CHECK(med(n, c, 0, 0) == median);
                CHECK(mx(n, c, 0, 0) == v.back());
                CHECK(avg(n, c, 0, 0) == doctest::Approx(total / m).epsilon(1e-14));
            }
    }
}

TEST_CASE("activations")
{
    Tensor<double> z(Shape{1, 3, 1, 1}, {0, 0, 0});
    const auto s0 = softmax_channels(z);
    for (int i = 0; i < 3; ++i)
        CHECK(s0(0, i, 0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-15));
    Tensor<double> l(Shape{1, 3, 1, 1}, {std::log(2.0), 0, 0});
    const auto s1 = softmax_channels(l);
    CHECK(s1(0, 0, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s1(0, 1, 0, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(s1(0, 2, 0, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(sigmoid(Tensor<double>(Shape{1, 1, 1, 1}, 0.0))(0, 0, 0, 0) == 0.5);
    const auto r = relu(Tensor<double>(Shape{1, 1, 1, 2}, {-1.5, 2.0}));
    CHECK(r(0, 0, 0, 0) == 0.0);
    CHECK(r(0, 0, 0, 1) == 2.0);
    // Large logits stay finite.
    const auto big = softmax_channels(Tensor<double>(Shape{1, 3, 1, 1}, {1000, 0, -1000}));
    CHECK(big(0, 0, 0, 0) == 1.0);
    CHECK(sigmoid(Tensor<double>(Shape{1, 1, 1, 1}, -800.0))(0, 0, 0, 0) == 0.0);
}

TEST_CASE("batch norm")
{
    Tensor<double> gamma(Shape{1, 2, 1, 1}, 1.0), beta(Shape{1, 2, 1, 1}, 0.0);
    Tensor<double> mean(Shape{1, 2, 1, 1}, 0.0), var(Shape{1, 2, 1, 1}, 1.0);
    SUBCASE("constant input normalizes to zero")
    {
        const auto y = batch_norm(Tensor<double>(Shape{2, 2, 3, 3}, 5.0), gamma, beta, mean, var, true);
        for (double v : y.data())
            CHECK(v == 0.0);
    }
    SUBCASE("two-pass statistics oracle and running update")
    {
        Rng rng(5);
        const auto x = random_tensor(Shape{3, 2, 4, 5}, rng, -2, 3);
        const auto y = batch_norm(x, gamma, beta, mean, var, true);
        for (int c = 0; c < 2; ++c) {
            double m = 0;
            int count = 0;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 5; ++j, ++count)
                        m += x(n, c, i, j);
            m /= count;
            double v = 0;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 5; ++j)
                        v += (x(n, c, i, j) - m) * (x(n, c, i, j) - m);
            const double biased = v / count;
            for (int n = 0; n < 3; ++n)
                for (int i = 0; i < 4; ++i)
                    for (int j = 0; j < 5; ++j)
                        CHECK(std::abs(y(n, c, i, j) - (x(n, c, i, j) - m) / std::sqrt(biased + 1e-5)) < 1e-6);
            CHECK(mean(0, c, 0, 0) == doctest::Approx(0.1 * m).epsilon(1e-12));
            CHECK(var(0, c, 0, 0) == doctest::Approx(0.9 + 0.1 * v / (count - 1)).epsilon(1e-12));
        }
        // Evaluation mode reads the running buffers and leaves them alone.
        const double m0 = mean(0, 0, 0, 0), v0 = var(0, 0, 0, 0);
        const auto e = batch_norm(x, gamma, beta, mean, var, false);
        CHECK(e(0, 0, 0, 0) == doctest::Approx((x(0, 0, 0, 0) - m0) / std::sqrt(v0 + 1e-5)).epsilon(1e-12));
        CHECK(mean(0, 0, 0, 0) == m0);
    }
    SUBCASE("training needs two values per channel")
    {
        CHECK_THROWS_AS(batch_norm(Tensor<double>(Shape{1, 2, 1, 1}), gamma, beta, mean, var, true), ConfigError);
    }
}

TEST_CASE("layer norm yields zero mean and unit variance per sample")
{
    Rng rng(6);
    const auto x = random_tensor(Shape{2, 3, 4, 4}, rng, -3, 5);
    Tensor<double> gamma(Shape{1, 3, 1, 1}, 1.0), beta(Shape{1, 3, 1, 1}, 0.0);
    const auto y = layer_norm(x, gamma, beta);
    const std::size_t per = 3 * 16;
    for (int n = 0; n < 2; ++n) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < per; ++i)
            m += y.data()[n * per + i];
        m /= per;
        for (std::size_t i = 0; i < per; ++i)
            v += (y.data()[n * per + i] - m) * (y.data()[n * per + i] - m);
        v /= per;
        CHECK(std::abs(m) < 1e-12);
        CHECK(std::abs(v - 1) < 1e-5);
    }
    // Per-channel affine.
    Tensor<double> g2(Shape{1, 3, 1, 1}, {1, 2, 3}), b2(Shape{1, 3, 1, 1}, {0, -1, 1});
    const auto z = layer_norm(x, g2, b2);
    CHECK(z(1, 2, 3, 1) == doctest::Approx(3 * y(1, 2, 3, 1) + 1).epsilon(1e-12));
}

namespace {

FrequencyMask gaussian_mask(int h, int w, double sigma)
{
    FrequencyMask m;
    m.h = h;
    m.w = w;
    m.center_u = h / 2;
    m.center_v = w / 2;
    m.values.resize(static_cast<std::size_t>(h) * w);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const double d2 = (u - h / 2) * (u - h / 2) + (v - w / 2) * (v - w / 2);
            m.values[static_cast<std::size_t>(u) * w + v] = std::exp(-d2 / (2 * sigma * sigma));
        }
    return m;
}

// Quadruple-loop reference: centered spectrum times mask, inverse, real part.
std::vector<double> dft_oracle(const std::vector<double>& x, int h, int w, const FrequencyMask& mask)
{
    using C = std::complex<double>;
    const double tau = 2 * std::numbers::pi;
    std::vector<C> spec(static_cast<std::size_t>(h) * w);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            const int fu = u - h / 2, fv = v - w / 2;
            C acc = 0;
            for (int r = 0; r < h; ++r)
                for (int s = 0; s < w; ++s)
                    acc += x[r * w + s] * std::polar(1.0, -tau * (double(fu) * r / h + double(fv) * s / w));
            spec[u * w + v] = acc * mask.at(u, v);
        }
    std::vector<double> out(x.size());
    for (int r = 0; r < h; ++r)
        for (int s = 0; s < w; ++s) {
            C acc = 0;
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) {
                    const int fu = u - h / 2, fv = v - w / 2;
                    acc += spec[u * w + v] * std::polar(1.0, tau * (double(fu) * r / h + double(fv) * s / w));
                }
            out[r * w + s] = acc.real() / (h * w);
        }
    return out;
}

}  // namespace

TEST_CASE("dft2_filter")
{
    Rng rng(7);
    SUBCASE("identity and zero masks")
    {
        for (auto [h, w] : {std::pair{8, 8}, std::pair{6, 10}, std::pair{5, 7}}) {
            const auto x = random_tensor(Shape{2, 3, h, w}, rng);
            CHECK(max_abs_diff(dft2_filter(x, FrequencyMask::constant(h, w, 1.0)), x) < 1e-5);
            const auto z = dft2_filter(x, FrequencyMask::constant(h, w, 0.0));
            for (double v : z.data())
                CHECK(v == 0.0);
        }
    }
    SUBCASE("impulse through a Gaussian low-pass matches the direct transform")
    {
        Tensor<double> x(Shape{1, 1, 8, 8});
        x.at(0, 0, 3, 5) = 1.0;
        const auto mask = gaussian_mask(8, 8, 1.5);
        const auto y = dft2_filter(x, mask);
        const auto ref = dft_oracle(std::vector<double>(x.data().begin(), x.data().end()), 8, 8, mask);
        for (std::size_t i = 0; i < ref.size(); ++i)
            CHECK(std::abs(y.data()[i] - ref[i]) < 1e-5);
    }
    SUBCASE("fast and direct paths agree; random planes match the oracle")
    {
        for (auto [h, w] : {std::pair{8, 16}, std::pair{6, 9}}) {
            const auto x = random_tensor(Shape{1, 2, h, w}, rng);
            const auto mask = gaussian_mask(h, w, 2.0);
            const auto fast = dft2_filter(x, mask, SpectralPath::automatic);
            const auto direct = dft2_filter(x, mask, SpectralPath::direct);
            CHECK(max_abs_diff(fast, direct) < 1e-9);
            std::vector<double> plane(x.data().begin() + h * w, x.data().begin() + 2 * h * w);
            const auto ref = dft_oracle(plane, h, w, mask);
            for (int i = 0; i < h * w; ++i)
                CHECK(std::abs(fast.data()[h * w + i] - ref[i]) < 1e-9);
        }
    }
    SUBCASE("realness")
    {
        const auto x = random_tensor(Shape{1, 2, 16, 16}, rng);
        CHECK(dft2_filter_imaginary_residue(x, gaussian_mask(16, 16, 3.0)) < 1e-6);
    }
    SUBCASE("rejections")
    {
        const auto x = random_tensor(Shape{1, 1, 8, 8}, rng);
        FrequencyMask lopsided = FrequencyMask::constant(8, 8, 1.0);
        lopsided.values[4 * 8 + 5] = 0.5;  // frequency (0, +1) without its mirror
        CHECK_THROWS_AS(dft2_filter(x, lopsided), ConfigError);
        CHECK_THROWS_AS(dft2_filter(x, FrequencyMask::constant(8, 6, 1.0)), DimensionError);
    }
}

TEST_CASE("linear primitives are adjoint-consistent")
{
    Rng rng(8);
    ConvSpec s = ConvSpec::same(3, 4, 3, 3, 2);
    const auto w = random_tensor(s.weight_shape(), rng);
    ConvSpec strided = ConvSpec::same(2, 2, 3, 3, 1, 2);
    strided.stride = 2;
    const auto ws = random_tensor(strided.weight_shape(), rng);
    const auto mask = gaussian_mask(8, 12, 2.0);
    const auto off = random_tensor(Shape{2, 18, 6, 6}, rng, -1.5, 1.5);
    const auto mod = random_tensor(Shape{2, 9, 6, 6}, rng, 0, 1);
    const auto wd = random_tensor(Shape{3, 2, 3, 3}, rng);
    const std::vector<int> perm{2, 0, 3, 1};

    CHECK(adjoint_gap([&](const Tensor<double>& x) { return conv2d(x, s, w); }, {2, 3, 7, 6}, rng) < 1e-5);
    CHECK(adjoint_gap([&](const Tensor<double>& x) { return conv2d(x, strided, ws); }, {1, 2, 9, 8}, rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return pool2d(x, PoolKind::avg); }, {1, 2, 7, 6}, rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return bilinear_upsample2x(x); }, {1, 2, 5, 4}, rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return pad_replicate(x, Padding{1, 2, 0, 3}); }, {1, 2, 4, 4},
                      rng) < 1e-5);
    CHECK(adjoint_gap([&](const Tensor<double>& x) { return dft2_filter(x, mask); }, {2, 2, 8, 12}, rng) < 1e-5);
    CHECK(adjoint_gap([&](const Tensor<double>& x) { return deform_conv2d(x, off, mod, wd); }, {2, 2, 6, 6}, rng) <
          1e-5);
    CHECK(adjoint_gap([&](const Tensor<double>& x) { return permute_channels(x, std::span<const int>(perm)); },
                      {1, 4, 3, 3}, rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return global_pool(x, GlobalPoolKind::avg); }, {2, 3, 4, 5},
                      rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return broadcast_spatial(x, 3, 4); }, {2, 3, 1, 1}, rng) < 1e-5);
    CHECK(adjoint_gap([](const Tensor<double>& x) { return slice_channels(x, 1, 2); }, {2, 4, 3, 3}, rng) < 1e-5);
}

TEST_CASE("gradient checks of individual primitives")
{
    Rng rng(9);
    SUBCASE("conv2d")
    {
        ConvSpec s = ConvSpec::same(2, 3, 3, 3, 2);
        Tensor<double> x = random_tensor(Shape{2, 2, 6, 5}, rng);
        Tensor<double> w = random_tensor(s.weight_shape(), rng);
        Tensor<double> b = random_tensor(Shape{1, 3, 1, 1}, rng);
        const auto r = check_gradients([&] { return conv2d(x, s, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
        INFO(r.summary());
        CHECK(r.passed);
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("dft2_filter")
    {
        Tensor<double> x = random_tensor(Shape{1, 2, 8, 8}, rng);
        const auto mask = gaussian_mask(8, 8, 2.0);
        const auto r = check_gradients([&] { return dft2_filter(x, mask); }, {{"x", x}});
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("deformable convolution including offsets and modulation")
    {
        Tensor<double> x = random_tensor(Shape{1, 2, 5, 5}, rng);
        Tensor<double> off = random_tensor(Shape{1, 18, 5, 5}, rng, -1.5, 1.5);
        Tensor<double> mod = random_tensor(Shape{1, 9, 5, 5}, rng, 0.1, 0.9);
        Tensor<double> w = random_tensor(Shape{2, 2, 3, 3}, rng);
        Tensor<double> b = random_tensor(Shape{1, 2, 1, 1}, rng);
        const auto r = check_gradients([&] { return deform_conv2d(x, off, mod, w, b); },
                                       {{"x", x}, {"offsets", off}, {"modulation", mod}, {"w", w}, {"b", b}});
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
    SUBCASE("norms, pooling, resampling and pointwise ops")
    {
        Tensor<double> x = random_tensor(Shape{2, 3, 4, 6}, rng);
        Tensor<double> y = random_tensor(Shape{2, 3, 4, 6}, rng);
        Tensor<double> gamma = random_tensor(Shape{1, 3, 1, 1}, rng, 0.5, 1.5);
        Tensor<double> beta = random_tensor(Shape{1, 3, 1, 1}, rng);
        Tensor<double> rm(Shape{1, 3, 1, 1}), rv(Shape{1, 3, 1, 1}, 1.0);
        const auto r = check_gradients(
            [&] {
                auto a = batch_norm(x, gamma, beta, rm, rv, true);
                auto b = layer_norm(y, gamma, beta);
                auto g = sigmoid(global_pool(mul(a, b), GlobalPoolKind::median));
                auto m = global_pool(x, GlobalPoolKind::max);
                auto u = bilinear_upsample2x(pool2d(add(mul_broadcast(a, g), mul_broadcast(b, m)), PoolKind::avg));
                auto s = softmax_channels(sub(u, scale(y, 0.5)));
                return concat_channels<double>({s, relu(u)});
            },
            {{"x", x}, {"y", y}, {"gamma", gamma}, {"beta", beta}});
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("branch trace tracks the smooth piece")
{
    Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{0.5, -0.2, 1e-6});
    auto trace = [&] {
        BranchTrace t;
        relu(x);
        return t.value();
    };
    const auto base = trace();
    CHECK(trace() == base);
    x.at(0, 0, 0, 0) = 0.7;
    CHECK(trace() == base);
    x.at(0, 0, 0, 2) = -1e-6;
    CHECK(trace() != base);
    {
        BranchTrace outer;
        CHECK_THROWS_AS(BranchTrace(), std::logic_error);
    }

    SUBCASE("sampling cells and pooling picks")
    {
        Tensor<double> m(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 3.5});
        auto pick = [&] {
            BranchTrace t;
            pool2d(m, PoolKind::max);
            global_pool(m, GlobalPoolKind::median);
            return t.value();
        };
        const auto p0 = pick();
        m.at(0, 0, 1, 0) = 3.6;
        CHECK(pick() != p0);

        Tensor<double> img(Shape{1, 1, 3, 3}, 1.0), w(Shape{1, 1, 3, 3}, 1.0);
        Tensor<double> off(Shape{1, 18, 3, 3}, 0.3), mod(Shape{1, 9, 3, 3}, 1.0);
        auto cell = [&] {
            BranchTrace t;
            deform_conv2d(img, off, mod, w, Tensor<double>());
            return t.value();
        };
        const auto c0 = cell();
        off.at(0, 4, 1, 1) = 0.9;
        CHECK(cell() == c0);
        off.at(0, 4, 1, 1) = 1.1;
        CHECK(cell() != c0);
    }

    SUBCASE("the checker shrinks the step across a kink")
    {
        // |v| via two ReLUs with v just right of the kink: a 1e-4 step
        // straddles it, the exact derivative is +1.
        Tensor<double> v(Shape{1, 1, 1, 1}, 3e-5);
        const auto f = [&] { return add(relu(v), relu(scale(v, -1.0))); };
        GradCheckOptions off;
        off.kink_refinements = 0;
        const auto naive = check_gradients(f, {{"v", v}}, off);
        CHECK(naive.max_rel_error > 0.1);
        const auto r = check_gradients(f, {{"v", v}});
        INFO(r.summary());
        CHECK(r.refined == 1);
        CHECK(r.max_rel_error < 1e-9);

        v.at(0, 0, 0, 0) = 0.0;
        const auto at_kink = check_gradients(f, {{"v", v}});
        CHECK(at_kink.nonsmooth == 1);
        CHECK(at_kink.coordinates == 0);
    }
}

TEST_CASE("backward visits every node once in topological order")
{
    Tensor<double> a(Shape{1, 1, 1, 3}, {1, -2, 3});
    a.set_requires_grad(true);
    const auto sq = mul(a, a);
    const auto y = add(sq, a);
    const auto g = Graph<double>::trace(y);
    CHECK(g.node_count() == 2);
    CHECK(g.order().front().impl() == a.impl());
    CHECK(g.order().back().impl() == y.impl());
    y.backward();
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == -3.0);
    CHECK(a.grad()[2] == 7.0);

    NoGradGuard guard;
    CHECK_FALSE(mul(a, a).requires_grad());
}

TEST_CASE("non-finite values are hard errors")
{
    Tensor<double> a(Shape{1, 1, 1, 2}, {1.0, INFINITY});
    Tensor<double> b(Shape{1, 1, 1, 2}, {1.0, -INFINITY});
    CHECK_THROWS_AS(add(a, b), NumericError);
}

TEST_CASE("raw tensor format")
{
    Rng rng(10);
    SUBCASE("bit-exact round trip for both precisions")
    {
        const auto d = random_tensor(Shape{2, 3, 4, 5}, rng);
        std::stringstream ss;
        write_tensor(ss, d);
        const auto back = read_tensor<double>(ss);
        CHECK(back.shape() == d.shape());
        CHECK(std::equal(d.data().begin(), d.data().end(), back.data().begin()));

        const auto f = random_tensor<float>(Shape{1, 1, 3, 7}, rng);
        std::stringstream sf;
        write_tensor(sf, f);
        const auto fb = read_tensor<float>(sf);
        CHECK(std::equal(f.data().begin(), f.data().end(), fb.data().begin()));
    }
    SUBCASE("header layout")
    {
        Tensor<float> t(Shape{1, 2, 3, 258}, 1.0f);
        std::stringstream ss;
        write_tensor(ss, t);
        const std::string bytes = ss.str();
        REQUIRE(bytes.size() == 23 + 4 * t.numel());
        CHECK(bytes.substr(0, 4) == "ARFC");
        CHECK(bytes[4] == 1);
        CHECK(bytes[5] == 0);
        CHECK(bytes[6] == 4);
        CHECK(static_cast<unsigned char>(bytes[19]) == 2);  // 258 = 0x0102, little-endian
        CHECK(static_cast<unsigned char>(bytes[20]) == 1);
        CHECK(bytes.substr(23, 4) == std::string("\x00\x00\x80\x3f", 4));
    }
    SUBCASE("malformed input")
    {
        std::stringstream bad_magic("ARFX\x01\x00\x04");
        CHECK_THROWS_AS(read_tensor<double>(bad_magic), ParseError);
        Tensor<double> t(Shape{1, 1, 2, 2}, 1.0);
        std::stringstream ss;
        write_tensor(ss, t);
        std::string truncated = ss.str();
        truncated.resize(truncated.size() - 3);
        std::stringstream tr(truncated);
        try {
            read_tensor<double>(tr);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("byte 52") != std::string::npos);
        }
    }
}
