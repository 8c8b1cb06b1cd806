#include "arfc/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "arfc/gmea.hpp"
#include "arfc/gradcheck.hpp"
#include "arfc/hlff.hpp"
#include "arfc/metrics.hpp"
#include "arfc/mrffi.hpp"
#include "arfc/net.hpp"
#include "arfc/ops.hpp"
#include "arfc/spectral.hpp"
#include "arfc/wavelet.hpp"

namespace arfc {

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<double> t(s);
    for (double& v : t.data_mut())
        v = rng.uniform(lo, hi);
    return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b)
{
    if (a.shape() != b.shape())
        return INFINITY;
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

template <typename M>
void jitter(M& module, Rng& rng, double scale)
{
    for (auto& p : module.parameters()) {
        const std::string& n = p.name;
        if (n.ends_with("bias") || n.ends_with("beta"))
            for (double& v : p.tensor->data_mut())
                v = rng.uniform(-scale, scale);
    }
}

template <typename M>
std::vector<GradProbe> probes(M& module, std::vector<GradProbe> extra)
{
    for (auto& p : module.parameters())
        extra.push_back({p.name, *p.tensor});
    return extra;
}

std::string format(double v)
{
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

CheckResult from_report(std::string name, const GradCheckReport& r)
{
    return {std::move(name), r.passed, r.summary()};
}

CheckResult bound(std::string name, double value, double limit)
{
    return {std::move(name), value < limit, "max error " + format(value) + " (limit " + format(limit) + ")"};
}

// Difference sums taken literally, with edge replication.
Tensor<double> difference_sums(const Tensor<double>& x, const Tensor<double>& hv, const Tensor<double>& dg)
{
    const Shape s = x.shape();
    Tensor<double> y(Shape{s.n, hv.shape().n, s.h, s.w});
    auto px = [&](int n, int c, int i, int j) {
        return x(n, c, std::clamp(i, 0, s.h - 1), std::clamp(j, 0, s.w - 1));
    };
    for (int n = 0; n < s.n; ++n)
        for (int o = 0; o < hv.shape().n; ++o)
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j) {
                    double acc = 0;
                    for (int c = 0; c < s.c; ++c)
                        for (int t = 0; t < 5; ++t) {
                            acc += hv(o, c, 0, t) * (px(n, c, i + kTapsHV[t][0], j + kTapsHV[t][1]) - px(n, c, i, j));
                            acc += dg(o, c, 0, t) * (px(n, c, i + kTapsDG[t][0], j + kTapsDG[t][1]) - px(n, c, i, j));
                        }
                    y.at(n, o, i, j) = acc;
                }
    return y;
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results)
{
    return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::vector<CheckResult> run_gradient_suite(std::uint64_t seed)
{
    std::vector<CheckResult> out;
    Rng rng(seed);
    auto check = [&](const char* name, const std::function<Tensor<double>()>& f, const std::vector<GradProbe>& p,
                     GradCheckOptions opt = {}) {
        opt.seed = rng.next();
        out.push_back(from_report(name, check_gradients(f, p, opt)));
    };

    {
        const ConvSpec spec = ConvSpec::same(2, 3, 3, 3, 2);
        Tensor<double> x = random_tensor(Shape{2, 2, 6, 5}, rng);
        Tensor<double> w = random_tensor(spec.weight_shape(), rng);
        Tensor<double> b = random_tensor(Shape{1, 3, 1, 1}, rng);
        check("conv2d", [&] { return conv2d(x, spec, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
    }
    {
        Tensor<double> x = random_tensor(Shape{1, 2, 8, 8}, rng);
        const FrequencyMask hp = build_mask(MaskKind::high_pass, 8, 8);
        const FrequencyMask lp = build_mask(MaskKind::low_pass, 6, 10);
        Tensor<double> y = random_tensor(Shape{1, 2, 6, 10}, rng);
        check("dft2_filter", [&] { return dft2_filter(x, hp); }, {{"x", x}});
        check("dft2_filter (non-power-of-two)", [&] { return dft2_filter(y, lp); }, {{"y", y}});
    }
    {
        Tensor<double> x = random_tensor(Shape{1, 2, 5, 5}, rng);
        Tensor<double> off = random_tensor(Shape{1, 18, 5, 5}, rng, -1.5, 1.5);
        Tensor<double> mod = random_tensor(Shape{1, 9, 5, 5}, rng, 0.1, 0.9);
        Tensor<double> w = random_tensor(Shape{2, 2, 3, 3}, rng);
        Tensor<double> b = random_tensor(Shape{1, 2, 1, 1}, rng);
        check("deform_conv2d", [&] { return deform_conv2d(x, off, mod, w, b); },
              {{"x", x}, {"offsets", off}, {"modulation", mod}, {"w", w}, {"b", b}});

        Dcn<double> d(2, 3, rng);
        for (double& v : d.offset_conv().weight().data_mut())
            v = rng.uniform(-0.4, 0.4);
        for (double& v : d.modulation_conv().weight().data_mut())
            v = rng.uniform(-0.4, 0.4);
        jitter(d, rng, 0.3);
        Tensor<double> xd = random_tensor(Shape{2, 2, 6, 6}, rng);
        check("DCN branch (predicted offsets)", [&] { return d.forward(xd); }, probes(d, {{"x", xd}}));
    }
    {
        Mddc<double> m(2, 3, rng);
        jitter(m, rng, 0.3);
        Tensor<double> x = random_tensor(Shape{2, 2, 5, 5}, rng);
        check("MDDC", [&] { return m.forward(x); }, probes(m, {{"x", x}}));
    }
    {
        Mrffi<double> m(2, 4, rng, MrffiOptions{8});
        for (double& v : m.dcn().offset_conv().weight().data_mut())
            v = rng.uniform(-0.3, 0.3);
        jitter(m, rng, 0.3);
        Tensor<double> x = random_tensor(Shape{2, 2, 6, 6}, rng);
        check("MRFFIConv", [&] { return m.forward(x); }, probes(m, {{"x", x}}));
    }
    {
        WfedBlock<double> b(4, rng);
        jitter(b, rng, 0.3);
        Tensor<double> x = random_tensor(Shape{2, 4, 8, 8}, rng);
        check("WFED", [&] { return b.forward(x); }, probes(b, {{"x", x}}));
    }
    {
        HlffBlock<double> b(8, 8, rng);
        jitter(b, rng, 0.3);
        Tensor<double> low = random_tensor(Shape{2, 8, 8, 8}, rng);
        Tensor<double> high = random_tensor(Shape{2, 8, 4, 4}, rng);
        check("HLFF", [&] { return b.forward(low, high); }, probes(b, {{"low", low}, {"high", high}}));
    }
    {
        GmeaBlock<double> g(8, rng);
        jitter(g, rng, 0.3);
        Tensor<double> f = random_tensor(Shape{2, 8, 6, 6}, rng);
        check("GMEA", [&] { return g.forward(f); }, probes(g, {{"f", f}}));
    }
    {
        Tensor<double> logits = random_tensor(Shape{3, 1, 6, 6}, rng, -3, 3);
        Tensor<double> mask(Shape{3, 1, 6, 6});
        for (double& v : mask.data_mut())
            v = rng.uniform() < 0.2 ? 1.0 : 0.0;
        check("soft_iou_loss", [&] { return soft_iou_loss(logits, mask); }, {{"logits", logits}});
    }
    {
        NetConfig cfg;
        cfg.stage_channels = {4, 8, 12, 16, 20};
        cfg.gate_hidden = 4;
        cfg.seed = seed;
        ArfcNet<double> net(cfg);
        jitter(net, rng, 0.2);
        for (int i = 0; i < 5; ++i)
            if (auto* m = net.encoder_block(i).mrffi())
                for (double& v : m->dcn().offset_conv().weight().data_mut())
                    v = rng.uniform(-0.2, 0.2);
        Tensor<double> x = random_tensor(Shape{2, 1, 16, 16}, rng, 0, 1);
        GradCheckOptions opt;
        // Parameters that a normalization cancels have exactly zero gradient;
        // their quotient is roundoff of order 1e-7 at this depth.
        opt.abs_floor = 1e-3;
        opt.max_coords_per_probe = 3;
        check("full network 16x16", [&] { return net.forward(x); }, probes(net, {{"x", x}}), opt);
    }
    return out;
}

std::vector<CheckResult> run_selftest(std::uint64_t seed)
{
    std::vector<CheckResult> out;
    Rng rng(seed);

    {
        double worst = 0;
        for (int trial = 0; trial < 12; ++trial) {
            const int h = 2 * (1 + static_cast<int>(rng.next() % 16));
            const int w = 2 * (1 + static_cast<int>(rng.next() % 16));
            const auto x = random_tensor(Shape{2, 3, h, w}, rng);
            worst = std::max(worst, max_abs_diff(haar_synthesize(haar_analyze(x)), x));
        }
        out.push_back(bound("haar round trip", worst, 1e-6));
        const auto ll = haar_analyze(Tensor<double>(Shape{1, 1, 2, 2}, 1.0)).ll;
        out.push_back({"haar approximation of ones", ll(0, 0, 0, 0) == 4.0, "F_ll = " + format(ll(0, 0, 0, 0))});
    }
    {
        const FrequencyMask hp = build_mask(MaskKind::high_pass, 64, 64);
        const FrequencyMask lp = build_mask(MaskKind::low_pass, 64, 64);
        const int cu = 32, cv = 32, d0 = static_cast<int>(hp.cutoff);
        const double err = std::max({std::abs(hp.at(cu, cv)), std::abs(hp.at(cu + d0, cv) - (1 - std::exp(-1.0))),
                                     std::abs(lp.at(cu, cv) - 1), std::abs(lp.at(cu, cv + d0) - std::exp(-1.0))});
        out.push_back(bound("frequency masks", err, 1e-6));
        const auto x = random_tensor(Shape{1, 2, 12, 16}, rng);
        out.push_back(bound("identity mask", max_abs_diff(dft2_filter(x, FrequencyMask::constant(12, 16, 1.0)), x), 1e-5));
    }
    {
        Mddc<double> m(3, 4, rng);
        double worst = 0;
        for (int trial = 0; trial < 10; ++trial) {
            const auto x = random_tensor(Shape{1, 3, 7, 9}, rng);
            worst = std::max(worst, max_abs_diff(m.aggregate(x), difference_sums(x, m.hv_weights(), m.dg_weights())));
        }
        out.push_back(bound("MDDC reparameterization", worst, 1e-6));
    }
    {
        Dcn<double> d(3, 4, rng);
        for (double& v : d.bias().data_mut())
            v = rng.uniform(-1, 1);
        const auto x = random_tensor(Shape{2, 3, 7, 6}, rng);
        auto expected = scale(conv2d(x, ConvSpec::same(3, 4, 3, 3), d.weight(), Tensor<double>()), 0.5);
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 4; ++c)
                for (int i = 0; i < 7; ++i)
                    for (int j = 0; j < 6; ++j)
                        expected.at(n, c, i, j) += d.bias()(0, c, 0, 0);
        out.push_back(bound("degenerate DCN", max_abs_diff(d.aggregate(x), expected), 1e-6));
    }
    {
        Mrffi<double> m(2, 4, rng);
        int bad = 0;
        double worst_sum = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            const auto x = random_tensor(Shape{1, 2, 4, 4}, rng, -3, 3);
            const auto s = m.gate().scores(x);
            const auto w = m.gate().forward(x);
            const auto shifted = softmax_channels(add(s, Tensor<double>(s.shape(), rng.uniform(-20, 20))));
            int a = 0, b = 0;
            double total = 0;
            for (int i = 0; i < 3; ++i) {
                bad += w(0, i, 0, 0) < 0;
                total += w(0, i, 0, 0);
                a = w(0, i, 0, 0) > w(0, a, 0, 0) ? i : a;
                b = shifted(0, i, 0, 0) > shifted(0, b, 0, 0) ? i : b;
            }
            bad += a != b;
            worst_sum = std::max(worst_sum, std::abs(total - 1));
        }
        const auto x = random_tensor(Shape{2, 2, 6, 6}, rng);
        m.pin_gate(std::array<double, 3>{0, 0, 1});
        bad += max_abs_diff(m.forward(x), m.mddc().forward(x)) != 0.0;
        m.pin_gate(std::array<double, 3>{1, 0, 0});
        bad += max_abs_diff(m.forward(x), m.msdc().forward(x)) != 0.0;
        out.push_back({"gate contract", bad == 0 && worst_sum < 1e-6,
                       std::to_string(bad) + " violations, max |sum - 1| " + format(worst_sum)});
    }
    {
        BinaryMap pred(1, 3), gt(1, 3);
        pred.data = {1, 1, 0};
        gt.data = {0, 1, 1};
        const auto pm = pixel_metrics(pred, gt);
        bool ok = std::abs(pm.iou - 1.0 / 3) < 1e-15 && std::abs(pm.f1 - 0.5) < 1e-15;
        std::vector<Tensor<float>> sal, masks;
        for (int k = 0; k < 4; ++k) {
            Tensor<float> s(Shape{1, 1, 8, 8}), g(Shape{1, 1, 8, 8});
            for (std::size_t i = 0; i < s.numel(); ++i) {
                s.data_mut()[i] = static_cast<float>(rng.uniform());
                g.data_mut()[i] = rng.uniform() < 0.2 ? 1.0f : 0.0f;
            }
            sal.push_back(s);
            masks.push_back(g);
        }
        const auto roc = roc_curve(sal, masks, uniform_thresholds(20));
        ok = ok && roc.front().fpr == 0 && roc.front().tpr == 0 && roc.back().fpr == 1 && roc.back().tpr == 1;
        for (std::size_t i = 1; i < roc.size(); ++i)
            ok = ok && roc[i].fpr >= roc[i - 1].fpr && roc[i].tpr >= roc[i - 1].tpr;
        out.push_back({"metrics", ok, "iou " + format(pm.iou) + ", f1 " + format(pm.f1) + ", roc points " +
                                          std::to_string(roc.size())});
    }
    {
        Tensor<double> mask(Shape{1, 1, 6, 6});
        for (int k : {3, 9, 10, 20})
            mask.data_mut()[k] = 1;
        Tensor<double> perfect(mask.shape()), empty(mask.shape(), -200.0);
        for (std::size_t i = 0; i < mask.numel(); ++i)
            perfect.data_mut()[i] = mask.data()[i] > 0 ? 200.0 : -200.0;
        const double l0 = soft_iou_loss(perfect, mask).data()[0];
        const double l1 = soft_iou_loss(empty, mask).data()[0];
        out.push_back(bound("soft IoU contract", std::max(std::abs(l0), std::abs(l1 - 4.0 / 5)), 1e-12));
    }
    return out;
}

}  // namespace arfc
