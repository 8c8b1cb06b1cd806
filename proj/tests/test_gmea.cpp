#include <cmath>

#include "arfc/gmea.hpp"
#include "arfc/gradcheck.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace arfc;
using testing::max_abs_diff;
using testing::naive_conv;
using testing::random_tensor;

namespace {

double sig(double v) { return 1 / (1 + std::exp(-v)); }

// MLP on one descriptor vector, from the layer definitions.
std::vector<double> mlp_oracle(nn::Mlp<double>& mlp, const std::vector<double>& d)
{
    auto layer = [](nn::Conv2d<double>& fc, const std::vector<double>& in, bool relu) {
        const int out = fc.spec().out_channels;
        std::vector<double> y(out);
        for (int o = 0; o < out; ++o) {
            double a = fc.bias()(0, o, 0, 0);
            for (std::size_t i = 0; i < in.size(); ++i)
                a += fc.weight()(o, static_cast<int>(i), 0, 0) * in[i];
            y[o] = relu ? std::max(a, 0.0) : a;
        }
        return y;
    };
    return layer(mlp.fc2(), layer(mlp.fc1(), d, true), false);
}

// Attention weights (N, C) from sorted planes.
std::vector<std::vector<double>> attention_oracle(nn::Mlp<double>& mlp, const Tensor<double>& f)
{
    const Shape s = f.shape();
    std::vector<std::vector<double>> out;
    for (int n = 0; n < s.n; ++n) {
        std::vector<double> avg, mx, med;
        for (int c = 0; c < s.c; ++c) {
            std::vector<double> v;
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j)
                    v.push_back(f(n, c, i, j));
            std::sort(v.begin(), v.end());
            double total = 0;
            for (double e : v)
                total += e;
            avg.push_back(total / v.size());
            mx.push_back(v.back());
            const std::size_t m = v.size();
            med.push_back(m % 2 ? v[m / 2] : (v[m / 2 - 1] + v[m / 2]) / 2);
        }
        const auto a = mlp_oracle(mlp, avg);
        const auto b = mlp_oracle(mlp, mx);
        const auto c = mlp_oracle(mlp, med);
        std::vector<double> w(s.c);
        for (int k = 0; k < s.c; ++k)
            w[k] = sig(a[k]) + sig(b[k]) + sig(c[k]);
        out.push_back(w);
    }
    return out;
}

void zero_module(nn::Module<double>& m)
{
    for (auto& p : m.parameters())
        p.tensor->fill(0.0);
}

void set_identity(nn::Conv2d<double>& pw)
{
    pw.weight().fill(0.0);
    pw.bias().fill(0.0);
    for (int c = 0; c < pw.spec().out_channels; ++c)
        pw.weight().at(c, c, 0, 0) = 1.0;
}

}  // namespace

TEST_CASE("channel shuffle")
{
    CHECK(shuffle_permutation(4, 4) == std::vector<int>{0, 1, 2, 3});
    CHECK(shuffle_permutation(8, 4) == std::vector<int>{0, 2, 4, 6, 1, 3, 5, 7});
    CHECK(shuffle_permutation(12, 4) == std::vector<int>{0, 3, 6, 9, 1, 4, 7, 10, 2, 5, 8, 11});
    CHECK_THROWS_AS(shuffle_permutation(6, 4), ConfigError);

    Rng rng(60);
    const auto x = random_tensor(Shape{2, 8, 3, 3}, rng);
    const auto y = channel_shuffle(x, 4);
    CHECK(y(1, 1, 2, 0) == x(1, 2, 2, 0));
    CHECK(y(0, 4, 1, 1) == x(0, 1, 1, 1));
    // Shuffling with the transposed grouping undoes it.
    CHECK(max_abs_diff(channel_shuffle(y, 2), x) == 0.0);
}

TEST_CASE("GMEA channel attention")
{
    Rng rng(61);
    GmeaBlock<double> g(8, rng);
    SUBCASE("constant input gives three times one sigmoid")
    {
        const auto f = Tensor<double>(Shape{1, 8, 6, 6}, 0.8);
        const auto w = g.attention_map(f);
        const auto ref = mlp_oracle(g.mlp(), std::vector<double>(8, 0.8));
        for (int c = 0; c < 8; ++c)
            CHECK(w(0, c, 0, 0) == doctest::Approx(3 * sig(ref[c])).epsilon(1e-14));
    }
    SUBCASE("zero perceptron gives 1.5")
    {
        zero_module(g.mlp());
        const auto w = g.attention_map(random_tensor(Shape{2, 8, 5, 5}, rng));
        for (double v : w.data())
            CHECK(v == 1.5);
    }
    SUBCASE("matches sorted-plane descriptors")
    {
        for (const Shape s : {Shape{2, 8, 5, 5}, Shape{2, 8, 4, 6}}) {
            const auto f = random_tensor(s, rng);
            const auto ref = attention_oracle(g.mlp(), f);
            const auto w = g.attention_map(f);
            const auto y = g.channel_attention(f);
            double worst = 0;
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    worst = std::max(worst, std::abs(w(n, c, 0, 0) - ref[n][c]));
                    for (int i = 0; i < s.h; ++i)
                        for (int j = 0; j < s.w; ++j)
                            worst = std::max(worst, std::abs(y(n, c, i, j) - ref[n][c] * f(n, c, i, j)));
                }
            CHECK(worst < 1e-13);
        }
    }
}

TEST_CASE("GMEA spatial attention")
{
    Rng rng(62);
    SUBCASE("zero input gives zero")
    {
        GmeaBlock<double> g(4, rng);
        const auto y = g.spatial_attention(Tensor<double>(Shape{1, 4, 9, 9}));
        for (double v : y.data())
            CHECK(v == 0.0);
    }
    SUBCASE("each strip in isolation")
    {
        GmeaBlock<double> g(4, rng, GmeaOptions{false});
        set_identity(g.out_conv());
        const auto fs = random_tensor(Shape{1, 4, 9, 13}, rng);
        for (int keep = 0; keep < 6; ++keep) {
            for (int i = 0; i < 6; ++i)
                if (i != keep) {
                    g.branch(i).weight().fill(0.0);
                    g.branch(i).bias().fill(0.0);
                } else {
                    for (double& v : g.branch(i).weight().data_mut())
                        v = rng.uniform(-1, 1);
                }
            const auto& spec = g.branch(keep).spec();
            CHECK(spec.kernel_h == GmeaBlock<double>::kStrips[keep][0]);
            CHECK(spec.kernel_w == GmeaBlock<double>::kStrips[keep][1]);
            const auto d = naive_conv(fs, spec, g.branch(keep).weight(), g.branch(keep).bias());
            auto expected = d;
            for (std::size_t k = 0; k < d.numel(); ++k)
                expected.data_mut()[k] = d.data()[k] * fs.data()[k];
            CHECK(max_abs_diff(g.spatial_attention(fs), expected) < 1e-13);
        }
    }
    SUBCASE("six strips after the stem")
    {
        GmeaBlock<double> g(4, rng);
        for (auto& p : g.parameters())
            for (double& v : p.tensor->data_mut())
                v = rng.uniform(-0.5, 0.5);
        const auto fs = random_tensor(Shape{2, 4, 12, 10}, rng);
        const auto base = naive_conv(fs, g.stem().spec(), g.stem().weight(), g.stem().bias());
        Tensor<double> total(fs.shape());
        for (int i = 0; i < 6; ++i) {
            const auto d = naive_conv(base, g.branch(i).spec(), g.branch(i).weight(), g.branch(i).bias());
            for (std::size_t k = 0; k < d.numel(); ++k)
                total.data_mut()[k] += d.data()[k];
        }
        auto expected = naive_conv(total, g.out_conv().spec(), g.out_conv().weight(), g.out_conv().bias());
        for (std::size_t k = 0; k < expected.numel(); ++k)
            expected.data_mut()[k] *= fs.data()[k];
        CHECK(max_abs_diff(g.spatial_attention(fs), expected) < 1e-12);
    }
}

TEST_CASE("GMEA block")
{
    Rng rng(63);
    SUBCASE("shape and errors")
    {
        GmeaBlock<double> g(8, rng);
        CHECK(g.forward(random_tensor(Shape{2, 8, 16, 16}, rng)).shape() == Shape{2, 8, 16, 16});
        // Strips longer than the plane still work.
        CHECK(g.forward(random_tensor(Shape{1, 8, 4, 4}, rng)).shape() == Shape{1, 8, 4, 4});
        CHECK_THROWS_AS(g.forward(random_tensor(Shape{1, 4, 4, 4}, rng)), DimensionError);
        CHECK_THROWS_AS(GmeaBlock<double>(6, rng), ConfigError);
    }
    SUBCASE("zero input gives zero")
    {
        GmeaBlock<double> g(8, rng);
        const auto y = g.forward(Tensor<double>(Shape{1, 8, 8, 8}));
        for (double v : y.data())
            CHECK(v == 0.0);
    }
    SUBCASE("composition of the two attentions")
    {
        GmeaBlock<double> g(8, rng);
        const auto f = random_tensor(Shape{2, 8, 8, 8}, rng);
        const auto ref = g.spatial_attention(channel_shuffle(g.channel_attention(f), 4));
        CHECK(max_abs_diff(g.forward(f), ref) == 0.0);
    }
    SUBCASE("gradient check")
    {
        GmeaBlock<double> g(8, rng);
        testing::jitter_biases(g, rng);
        Tensor<double> f = random_tensor(Shape{2, 8, 6, 6}, rng);
        const auto r = check_gradients([&] { return g.forward(f); }, testing::parameter_probes(g, {{"f", f}}));
        INFO(r.summary());
        CHECK(r.max_rel_error < 1e-4);
    }
}
