#include <cmath>

#include "arfc/gradcheck.hpp"
#include "arfc/mrffi.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace arfc;
using testing::bn_oracle;
using testing::max_abs_diff;
using testing::naive_conv;
using testing::random_tensor;
using testing::relu_oracle;

namespace {

void randomize(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    for (double& v : t.data_mut())
        v = rng.uniform(lo, hi);
}

void randomize_all(nn::Module<double>& m, Rng& rng)
{
    for (auto& p : m.parameters())
        randomize(*p.tensor, rng, -0.5, 0.5);
}

Tensor<double> conv_bn_relu_oracle(nn::ConvBnRelu<double>& cbr, const Tensor<double>& x)
{
    const auto z = naive_conv(x, cbr.conv().spec(), cbr.conv().weight(), cbr.conv().bias());
    return relu_oracle(bn_oracle(z, cbr.bn().gamma(), cbr.bn().beta()));
}

// Direct evaluation of the difference sums with edge replication.
Tensor<double> difference_oracle(const Tensor<double>& x, const Tensor<double>& hv, const Tensor<double>& dg)
{
    const Shape s = x.shape();
    const int co = hv.shape().n;
    Tensor<double> y(Shape{s.n, co, s.h, s.w});
    auto px = [&](int n, int c, int i, int j) {
        return x(n, c, std::clamp(i, 0, s.h - 1), std::clamp(j, 0, s.w - 1));
    };
    for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < co; ++o)
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j) {
                    double acc = 0;
                    for (int c = 0; c < s.c; ++c)
                        for (int t = 0; t < 5; ++t) {
                            const auto [a, b] = kTapsHV[t];
                            acc += hv(o, c, 0, t) * (px(n, c, i + a, j + b) - px(n, c, i, j));
                            const auto [e, f] = kTapsDG[t];
                            acc += dg(o, c, 0, t) * (px(n, c, i + e, j + f) - px(n, c, i, j));
                        }
                    y.at(n, o, i, j) = acc;
                }
    return y;
}

Tensor<double> shifted(const Tensor<double>& x, int dy, int dx)
{
    const Shape s = x.shape();
    Tensor<double> y(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j) {
                    const int r = i + dy;
                    const int q = j + dx;
                    y.at(n, c, i, j) = r >= 0 && r < s.h && q >= 0 && q < s.w ? x(n, c, r, q) : 0.0;
                }
    return y;
}

}  // namespace

TEST_CASE("MSDC")
{
    Rng rng(41);
    SUBCASE("keeps the plane size")
    {
        Msdc<double> m(3, 8, rng);
        CHECK(m.mid_channels() == 2);
        CHECK(m.forward(random_tensor(Shape{2, 3, 9, 7}, rng)).shape() == Shape{2, 8, 9, 7});
        CHECK_THROWS_AS(Msdc<double>(3, 6, rng), ConfigError);
    }
    SUBCASE("zero weights give a zero map")
    {
        Msdc<double> m(3, 8, rng);
        for (auto& p : m.parameters())
            if (p.name.find("bn.gamma") == std::string::npos)
                p.tensor->fill(0.0);
        const auto y = m.forward(random_tensor(Shape{2, 3, 8, 8}, rng));
        CHECK(max_abs_diff(y, Tensor<double>(y.shape())) == 0.0);
    }
    SUBCASE("matches four lanes evaluated separately")
    {
        Msdc<double> m(3, 8, rng);
        randomize_all(m, rng);
        const auto x = random_tensor(Shape{2, 3, 10, 10}, rng);
        std::vector<Tensor<double>> lanes;
        for (int k = 0; k < 3; ++k) {
            CHECK(m.lane(k).conv().spec().dilation == Msdc<double>::kDilations[k]);
            lanes.push_back(conv_bn_relu_oracle(m.lane(k), x));
        }
        Tensor<double> mean(Shape{2, 3, 1, 1});
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int i = 0; i < 10; ++i)
                    for (int j = 0; j < 10; ++j)
                        s += x(n, c, i, j);
                mean.at(n, c, 0, 0) = s / 100;
            }
        const auto g = relu_oracle(naive_conv(mean, m.gap_conv().spec(), m.gap_conv().weight(), m.gap_conv().bias()));
        Tensor<double> stacked(Shape{2, 8, 10, 10});
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 8; ++c)
                for (int i = 0; i < 10; ++i)
                    for (int j = 0; j < 10; ++j)
                        stacked.at(n, c, i, j) = c < 6 ? lanes[c / 2](n, c % 2, i, j) : g(n, c - 6, 0, 0);
        CHECK(max_abs_diff(m.forward(x), conv_bn_relu_oracle(m.fuse(), stacked)) < 1e-10);
    }
}

TEST_CASE("DCN")
{
    Rng rng(42);
    SUBCASE("a fresh branch is half a regular convolution")
    {
        Dcn<double> d(3, 5, rng);
        randomize(d.bias(), rng);
        for (int trial = 0; trial < 10; ++trial) {
            const auto x = random_tensor(Shape{2, 3, 7, 6}, rng);
            const auto conv = naive_conv(x, ConvSpec::same(3, 5, 3, 3), d.weight());
            auto expected = conv;
            for (int n = 0; n < 2; ++n)
                for (int c = 0; c < 5; ++c)
                    for (int i = 0; i < 7; ++i)
                        for (int j = 0; j < 6; ++j)
                            expected.at(n, c, i, j) = 0.5 * conv(n, c, i, j) + d.bias()(0, c, 0, 0);
            CHECK(max_abs_diff(d.aggregate(x), expected) < 1e-12);
        }
    }
    SUBCASE("integer offsets shift the input")
    {
        const auto x = random_tensor(Shape{1, 2, 6, 6}, rng);
        const auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
        const Tensor<double> ones(Shape{1, 9, 6, 6}, 1.0);
        for (auto [dy, dx] : {std::pair{1, 0}, std::pair{0, 1}, std::pair{-1, 1}}) {
            Tensor<double> off(Shape{1, 18, 6, 6});
            for (int k = 0; k < 9; ++k)
                for (int i = 0; i < 6; ++i)
                    for (int j = 0; j < 6; ++j) {
                        off.at(0, 2 * k, i, j) = dy;
                        off.at(0, 2 * k + 1, i, j) = dx;
                    }
            // Shifting the sampling grid equals convolving the shifted input
            // wherever no tap leaves the image.
            const auto got = deform_conv2d(x, off, ones, w);
            const auto ref = naive_conv(shifted(x, dy, dx), ConvSpec::same(2, 3, 3, 3), w);
            double worst = 0;
            for (int c = 0; c < 3; ++c)
                for (int i = 1; i < 5; ++i)
                    for (int j = 1; j < 5; ++j)
                        if (i + dy >= 1 && i + dy <= 4 && j + dx >= 1 && j + dx <= 4)
                            worst = std::max(worst, std::abs(got(0, c, i, j) - ref(0, c, i, j)));
            CHECK(worst < 1e-12);
        }
    }
    SUBCASE("gradient check through predicted offsets")
    {
        Dcn<double> d(2, 3, rng);
        randomize(d.offset_conv().weight(), rng, -0.4, 0.4);
        randomize(d.modulation_conv().weight(), rng, -0.4, 0.4);
        testing::jitter_biases(d, rng);
        Tensor<double> x = random_tensor(Shape{2, 2, 6, 6}, rng);
        const auto r = check_gradients([&] { return d.forward(x); }, testing::parameter_probes(d, {{"x", x}}));
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("difference kernels")
{
    Rng rng(43);
    SUBCASE("constant input gives zero")
    {
        Mddc<double> m(3, 4, rng);
        const auto y = m.aggregate(Tensor<double>(Shape{2, 3, 7, 9}, 3.75));
        double worst = 0;
        for (double v : y.data())
            worst = std::max(worst, std::abs(v));
        CHECK(worst < 1e-12);
    }
    SUBCASE("impulse response is the folded kernel")
    {
        Mddc<double> m(1, 1, rng);
        m.dg_weights().fill(0.0);
        Tensor<double> x(Shape{1, 1, 5, 5});
        x.at(0, 0, 2, 2) = 1.0;
        const auto y = m.aggregate(x);
        const auto& hv = m.hv_weights();
        // Cross-correlation: output at (2 - dy, 2 - dx) reads tap (dy, dx).
        CHECK(y(0, 0, 3, 2) == doctest::Approx(hv(0, 0, 0, 0)));  // (-1, 0)
        CHECK(y(0, 0, 2, 3) == doctest::Approx(hv(0, 0, 0, 1)));  // (0, -1)
        CHECK(y(0, 0, 2, 1) == doctest::Approx(hv(0, 0, 0, 3)));  // (0, 1)
        CHECK(y(0, 0, 1, 2) == doctest::Approx(hv(0, 0, 0, 4)));  // (1, 0)
        const double center = -(hv(0, 0, 0, 0) + hv(0, 0, 0, 1) + hv(0, 0, 0, 3) + hv(0, 0, 0, 4));
        CHECK(y(0, 0, 2, 2) == doctest::Approx(center));
        CHECK(y(0, 0, 1, 1) == 0.0);
        CHECK(y(0, 0, 3, 3) == 0.0);
    }
    SUBCASE("folded convolution equals the difference sums")
    {
        Mddc<double> m(3, 4, rng);
        double worst = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const auto x = random_tensor(Shape{1, 3, 8, 8}, rng);
            worst = std::max(worst, max_abs_diff(m.aggregate(x), difference_oracle(x, m.hv_weights(), m.dg_weights())));
        }
        CHECK(worst < 1e-12);
    }
    SUBCASE("kernel layout")
    {
        Tensor<double> hv(Shape{1, 1, 1, 5});
        Tensor<double> dg(Shape{1, 1, 1, 5});
        for (int t = 0; t < 5; ++t) {
            hv.at(0, 0, 0, t) = t + 1;
            dg.at(0, 0, 0, t) = 10 * (t + 1);
        }
        const auto k = difference_kernel(hv, dg);
        const double expected[3][3] = {{10, 1, 20}, {2, -15 - 150 + 3 + 30, 4}, {40, 5, 50}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(k(0, 0, i, j) == expected[i][j]);
        CHECK_THROWS_AS(difference_kernel(hv, Tensor<double>(Shape{1, 1, 1, 4})), DimensionError);
    }
    SUBCASE("gradient check")
    {
        Mddc<double> m(2, 3, rng);
        Tensor<double> x = random_tensor(Shape{2, 2, 5, 5}, rng);
        const auto r = check_gradients([&] { return m.forward(x); }, testing::parameter_probes(m, {{"x", x}}));
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("gated unit")
{
    Rng rng(44);
    GatedUnit<double> gate(4, 16, rng);
    SUBCASE("equal scores give a third each")
    {
        gate.mlp().fc2().weight().fill(0.0);
        gate.mlp().fc2().bias().fill(0.7);
        const auto w = gate.forward(random_tensor(Shape{3, 4, 5, 5}, rng));
        for (double v : w.data())
            CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
    }
    SUBCASE("simplex, shift invariance and argmax on random inputs")
    {
        double worst_sum = 0, worst_shift = 0;
        int negative = 0, argmax_moved = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            const auto x = random_tensor(Shape{1, 4, 4, 4}, rng, -3, 3);
            const auto s = gate.scores(x);
            const auto w = gate.forward(x);
            const double shift = rng.uniform(-50, 50);
            Tensor<double> s2(s.shape());
            for (int i = 0; i < 3; ++i)
                s2.at(0, i, 0, 0) = s(0, i, 0, 0) + shift;
            const auto w2 = softmax_channels(s2);
            double total = 0;
            int a1 = 0, a2 = 0, a0 = 0;
            for (int i = 0; i < 3; ++i) {
                total += w(0, i, 0, 0);
                negative += w(0, i, 0, 0) < 0;
                worst_shift = std::max(worst_shift, std::abs(w(0, i, 0, 0) - w2(0, i, 0, 0)));
                if (w(0, i, 0, 0) > w(0, a1, 0, 0))
                    a1 = i;
                if (w2(0, i, 0, 0) > w2(0, a2, 0, 0))
                    a2 = i;
                if (s(0, i, 0, 0) > s(0, a0, 0, 0))
                    a0 = i;
            }
            worst_sum = std::max(worst_sum, std::abs(total - 1));
            argmax_moved += a1 != a2 || a1 != a0;
        }
        CHECK(negative == 0);
        CHECK(worst_sum < 1e-6);
        CHECK(worst_shift < 1e-12);
        CHECK(argmax_moved == 0);
    }
}

TEST_CASE("MRFFI")
{
    Rng rng(45);
    SUBCASE("pinned one-hot gates reproduce each expert")
    {
        Mrffi<double> m(2, 4, rng);
        randomize(m.dcn().offset_conv().weight(), rng, -0.3, 0.3);
        for (int trial = 0; trial < 20; ++trial) {
            const auto x = random_tensor(Shape{2, 2, 6, 6}, rng);
            m.pin_gate(std::array<double, 3>{1, 0, 0});
            CHECK(max_abs_diff(m.forward(x), m.msdc().forward(x)) == 0.0);
            m.pin_gate(std::array<double, 3>{0, 1, 0});
            CHECK(max_abs_diff(m.forward(x), m.dcn().forward(x)) == 0.0);
            m.pin_gate(std::array<double, 3>{0, 0, 1});
            CHECK(max_abs_diff(m.forward(x), m.mddc().forward(x)) == 0.0);
        }
    }
    SUBCASE("mixed pinned weights")
    {
        Mrffi<double> m(2, 4, rng);
        const auto x = random_tensor(Shape{2, 2, 6, 6}, rng);
        m.pin_gate(std::array<double, 3>{0.5, 0.25, 0.25});
        const auto y = m.forward(x);
        const auto a = m.msdc().forward(x);
        const auto b = m.dcn().forward(x);
        const auto c = m.mddc().forward(x);
        double worst = 0;
        for (std::size_t i = 0; i < y.numel(); ++i)
            worst = std::max(worst, std::abs(y.data()[i] - (0.5 * a.data()[i] + 0.25 * b.data()[i] +
                                                            0.25 * c.data()[i])));
        CHECK(worst < 1e-15);
    }
    SUBCASE("learned gate weights scale per sample")
    {
        Mrffi<double> m(2, 4, rng);
        const auto x = random_tensor(Shape{2, 2, 6, 6}, rng);
        const auto w = m.gate_weights(x);
        const auto y = m.forward(x);
        const std::array<Tensor<double>, 3> e{m.msdc().forward(x), m.dcn().forward(x), m.mddc().forward(x)};
        double worst = 0;
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 4; ++c)
                for (int i = 0; i < 6; ++i)
                    for (int j = 0; j < 6; ++j) {
                        double ref = 0;
                        for (int k = 0; k < 3; ++k)
                            ref += w(n, k, 0, 0) * e[k](n, c, i, j);
                        worst = std::max(worst, std::abs(y(n, c, i, j) - ref));
                    }
        CHECK(worst < 1e-14);
    }
    SUBCASE("gradient check through gate and experts")
    {
        Mrffi<double> m(2, 4, rng);
        randomize(m.dcn().offset_conv().weight(), rng, -0.3, 0.3);
        testing::jitter_biases(m, rng);
        Tensor<double> x = random_tensor(Shape{2, 2, 6, 6}, rng);
        const auto r = check_gradients([&] { return m.forward(x); }, testing::parameter_probes(m, {{"x", x}}));
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
}
