#include <set>
#include <sstream>

#include "arfc/metrics.hpp"
#include "doctest.h"
#include "metric_oracles.hpp"

using namespace arfc;

namespace {

BinaryMap map_of(int h, int w, std::initializer_list<std::pair<int, int>> on)
{
    BinaryMap m(h, w);
    for (auto [r, c] : on)
        m.data[static_cast<std::size_t>(r) * w + c] = 1;
    return m;
}

void square(BinaryMap& m, int r0, int c0, int side)
{
    for (int r = r0; r < r0 + side; ++r)
        for (int c = c0; c < c0 + side; ++c)
            m.data[static_cast<std::size_t>(r) * m.w + c] = 1;
}

// Enumerates every maximal one-to-one matching inside the radius and keeps
// the one whose edges, sorted by (d2, gt, pred), are lexicographically least.
std::set<std::pair<int, int>> exhaustive_match(const BinaryMap& pred, const BinaryMap& gt, double radius)
{
    const auto g = testing::blob_stats(testing::union_find_labels(gt), gt.w);
    const auto p = testing::blob_stats(testing::union_find_labels(pred), pred.w);
    std::vector<std::tuple<double, int, int>> edges;
    for (int i = 0; i < static_cast<int>(g.size()); ++i)
        for (int j = 0; j < static_cast<int>(p.size()); ++j) {
            const double d = (g[i].row - p[j].row) * (g[i].row - p[j].row) + (g[i].col - p[j].col) * (g[i].col - p[j].col);
            if (d <= radius * radius)
                edges.emplace_back(d, i, j);
        }
    std::sort(edges.begin(), edges.end());
    std::vector<std::tuple<double, int, int>> best;
    bool have = false;
    for (unsigned mask = 0; mask < (1u << edges.size()); ++mask) {
        std::vector<std::tuple<double, int, int>> chosen;
        std::set<int> gs, ps;
        bool ok = true;
        for (std::size_t e = 0; e < edges.size(); ++e)
            if (mask >> e & 1) {
                const auto [d, i, j] = edges[e];
                ok = ok && gs.insert(i).second && ps.insert(j).second;
                chosen.push_back(edges[e]);
            }
        if (!ok)
            continue;
        bool maximal = true;
        for (const auto& [d, i, j] : edges)
            if (!gs.count(i) && !ps.count(j))
                maximal = false;
        if (maximal && (!have || chosen < best)) {
            best = chosen;
            have = true;
        }
    }
    std::set<std::pair<int, int>> out;
    for (const auto& [d, i, j] : best)
        out.insert({i, j});
    return out;
}

Tensor<float> tensor_of(const BinaryMap& m) { return m.to_tensor(); }

}  // namespace

TEST_CASE("connected components")
{
    SUBCASE("empty mask")
    {
        CHECK(label_components(BinaryMap(5, 5)).components.empty());
    }
    SUBCASE("diagonal neighbours join")
    {
        const auto s = label_components(map_of(4, 4, {{1, 1}, {2, 2}}));
        REQUIRE(s.components.size() == 1);
        CHECK(s.components[0].area == 2);
        CHECK(s.components[0].row == 1.5);
        CHECK(s.components[0].col == 1.5);
    }
    SUBCASE("centroid is the pixel mean")
    {
        const auto s = label_components(map_of(5, 6, {{0, 4}, {0, 5}, {1, 5}, {4, 0}}));
        REQUIRE(s.components.size() == 2);
        CHECK(s.components[0].row == doctest::Approx(1.0 / 3));
        CHECK(s.components[0].col == doctest::Approx(14.0 / 3));
        CHECK(s.components[1].area == 1);
        CHECK(s.labels[4 * 6 + 0] == 1);
        CHECK(s.labels[0] == -1);
    }
    SUBCASE("matches union-find on random masks")
    {
        Rng rng(70);
        for (int trial = 0; trial < 200; ++trial) {
            const auto m = testing::random_mask(16, 16, rng.uniform(0.05, 0.6), rng);
            const auto s = label_components(m);
            CHECK(s.labels == testing::union_find_labels(m));
            std::size_t covered = 0;
            for (const auto& c : s.components) {
                covered += c.pixels.size();
                CHECK(std::is_sorted(c.pixels.begin(), c.pixels.end()));
            }
            CHECK(covered == m.count());
        }
    }
}

TEST_CASE("pixel metrics")
{
    const auto a = map_of(3, 3, {{0, 0}, {1, 1}});
    SUBCASE("identical masks")
    {
        const auto m = pixel_metrics(a, a);
        CHECK(m.iou == 1.0);
        CHECK(m.f1 == 1.0);
    }
    SUBCASE("disjoint masks")
    {
        const auto m = pixel_metrics(a, map_of(3, 3, {{2, 2}}));
        CHECK(m.iou == 0.0);
        CHECK(m.f1 == 0.0);
    }
    SUBCASE("pred {a, b} against gt {b, c}")
    {
        const auto m = pixel_metrics(map_of(1, 3, {{0, 0}, {0, 1}}), map_of(1, 3, {{0, 1}, {0, 2}}));
        CHECK(m.iou == 1.0 / 3);
        CHECK(m.precision == 0.5);
        CHECK(m.recall == 0.5);
        CHECK(m.f1 == 0.5);
    }
    SUBCASE("empty-union conventions")
    {
        CHECK(pixel_metrics(BinaryMap(2, 2), BinaryMap(2, 2)).iou == 1.0);
        CHECK(pixel_metrics(a, BinaryMap(3, 3)).iou == 0.0);
        CHECK(pixel_metrics(BinaryMap(3, 3), a).iou == 0.0);
    }
    SUBCASE("size mismatch")
    {
        CHECK_THROWS_AS(pixel_metrics(a, BinaryMap(3, 4)), DimensionError);
        CHECK_THROWS_AS(target_metrics(a, BinaryMap(4, 3)), DimensionError);
    }
    SUBCASE("random pairs against a recount")
    {
        Rng rng(71);
        double worst_f1 = 0;
        for (int trial = 0; trial < 200; ++trial) {
            const auto p = testing::random_mask(32, 32, rng.uniform(0, 0.3), rng);
            const auto g = testing::random_mask(32, 32, rng.uniform(0, 0.3), rng);
            const auto ref = testing::recount_pixels(p, g);
            const auto m = pixel_metrics(p, g);
            CHECK(m.counts.tp == ref.tp);
            CHECK(m.counts.fp == ref.fp);
            CHECK(m.counts.fn == ref.fn);
            CHECK(m.counts.tn == ref.tn);
            const double pre = static_cast<double>(ref.tp) / static_cast<double>(ref.tp + ref.fp);
            const double rec = static_cast<double>(ref.tp) / static_cast<double>(ref.tp + ref.fn);
            CHECK(m.iou == static_cast<double>(ref.tp) / static_cast<double>(ref.tp + ref.fp + ref.fn));
            if (pre + rec > 0)
                worst_f1 = std::max(worst_f1, std::abs(m.f1 - 2 * pre * rec / (pre + rec)));
        }
        CHECK(worst_f1 < 1e-12);
    }
}

TEST_CASE("target metrics")
{
    SUBCASE("prediction two pixels away is a hit")
    {
        BinaryMap gt(20, 20), pred(20, 20);
        square(gt, 5, 5, 3);
        square(pred, 7, 5, 3);
        const auto m = target_metrics(pred, gt);
        CHECK(m.counts.t_correct == 1);
        CHECK(m.pd == 1.0);
        CHECK(m.counts.p_false == 0);
        REQUIRE(m.matches.size() == 1);
        CHECK(m.matches[0].distance == 2.0);
    }
    SUBCASE("prediction ten pixels away is a miss plus a false alarm")
    {
        const auto gt = map_of(30, 30, {{5, 5}, {5, 6}, {6, 5}, {6, 6}, {7, 5}});
        const auto pred = map_of(30, 30, {{15, 5}, {15, 6}, {16, 5}, {16, 6}, {17, 5}});
        const auto m = target_metrics(pred, gt);
        CHECK(m.pd == 0.0);
        CHECK(m.counts.p_false == 5);
        CHECK(m.counts.p_all == 900);
        CHECK(m.fa == 5.0 / 900);
    }
    SUBCASE("equidistant prediction matches the lower ground-truth id")
    {
        const auto gt = map_of(9, 9, {{4, 1}, {4, 7}});
        const auto pred = map_of(9, 9, {{4, 4}});
        const auto m = target_metrics(pred, gt);
        CHECK(m.counts.t_correct == 1);
        CHECK(m.counts.t_act == 2);
        CHECK(m.pd == 0.5);
        REQUIRE(m.matches.size() == 1);
        CHECK(m.matches[0].gt_id == 0);
    }
    SUBCASE("no targets gives full detection")
    {
        const auto m = target_metrics(map_of(4, 4, {{1, 1}}), BinaryMap(4, 4));
        CHECK(m.pd == 1.0);
        CHECK(m.counts.p_false == 1);
    }
    SUBCASE("greedy matching against exhaustive enumeration")
    {
        Rng rng(72);
        for (int trial = 0; trial < 300; ++trial) {
            BinaryMap gt(12, 12), pred(12, 12);
            for (auto* m : {&gt, &pred}) {
                const int count = rng.integer(0, 3);
                for (int k = 0; k < count; ++k)
                    square(*m, rng.integer(0, 10), rng.integer(0, 10), rng.integer(1, 2));
            }
            const auto m = target_metrics(pred, gt);
            std::set<std::pair<int, int>> got;
            for (const auto& e : m.matches)
                got.insert({e.gt_id, e.pred_id});
            CHECK(got == exhaustive_match(pred, gt, 3.0));
        }
    }
    SUBCASE("random pairs against a recount")
    {
        Rng rng(73);
        for (int trial = 0; trial < 200; ++trial) {
            const auto p = testing::random_mask(32, 32, rng.uniform(0, 0.1), rng);
            const auto g = testing::random_mask(32, 32, rng.uniform(0, 0.1), rng);
            const auto [correct, act, p_false] = testing::recount_targets(p, g, 3.0);
            const auto m = target_metrics(p, g);
            CHECK(m.counts.t_correct == correct);
            CHECK(m.counts.t_act == act);
            CHECK(m.counts.p_false == p_false);
            CHECK(m.counts.t_correct <= std::min<long long>(act, label_components(p).components.size()));
        }
    }
}

TEST_CASE("ROC")
{
    Rng rng(74);
    std::vector<Tensor<float>> sal, gt;
    for (int k = 0; k < 3; ++k) {
        Tensor<float> s(Shape{1, 1, 16, 16}), g(Shape{1, 1, 16, 16});
        for (std::size_t i = 0; i < s.numel(); ++i) {
            const bool fg = rng.uniform() < 0.1;
            g.data_mut()[i] = fg ? 1.0f : 0.0f;
            s.data_mut()[i] = static_cast<float>(std::clamp(rng.uniform() * 0.7 + (fg ? 0.3 : 0.0), 0.0, 1.0));
        }
        sal.push_back(s);
        gt.push_back(g);
    }
    SUBCASE("endpoints and monotonicity")
    {
        const auto roc = roc_curve(sal, gt, uniform_thresholds(50));
        REQUIRE(roc.size() == 51);
        CHECK(roc.front().fpr == 0.0);
        CHECK(roc.front().tpr == 0.0);
        CHECK(roc.back().fpr == 1.0);
        CHECK(roc.back().tpr == 1.0);
        for (std::size_t i = 1; i < roc.size(); ++i) {
            CHECK(roc[i].fpr >= roc[i - 1].fpr);
            CHECK(roc[i].tpr >= roc[i - 1].tpr);
        }
    }
    SUBCASE("perfect separation reaches (0, 1)")
    {
        const auto roc = roc_curve(gt, gt, {1.0, 0.5, 0.0});
        CHECK(roc[1].fpr == 0.0);
        CHECK(roc[1].tpr == 1.0);
    }
    SUBCASE("bad thresholds")
    {
        CHECK_THROWS_AS(roc_curve(sal, gt, {0.5, 0.5}), ConfigError);
        CHECK_THROWS_AS(roc_curve(sal, gt, {1.5, 0.5}), ConfigError);
        CHECK_THROWS_AS(roc_curve(sal, {gt[0]}, {0.5}), DimensionError);
    }
}

TEST_CASE("split evaluation")
{
    SUBCASE("single perfect prediction")
    {
        BinaryMap g(16, 16);
        square(g, 3, 3, 2);
        const auto r = evaluate_split({tensor_of(g)}, {tensor_of(g)});
        CHECK(r.iou == 1.0);
        CHECK(r.f1 == 1.0);
        CHECK(r.pd == 1.0);
        CHECK(r.fa == 0.0);
    }
    SUBCASE("one perfect image and one missed four-pixel target")
    {
        BinaryMap g1(64, 64), g2(64, 64);
        square(g1, 10, 10, 3);
        square(g2, 40, 40, 2);
        const auto r = evaluate_split({tensor_of(g1), tensor_of(BinaryMap(64, 64))}, {tensor_of(g1), tensor_of(g2)});
        CHECK(r.pd == 0.5);
        CHECK(r.iou == 9.0 / (9.0 + 4.0));
        CHECK(r.targets.p_all == 2 * 64 * 64);
    }
    SUBCASE("micro averages equal a pooled recount")
    {
        Rng rng(75);
        std::vector<Tensor<float>> preds, masks;
        PixelCounts pooled;
        long long correct = 0, act = 0, p_false = 0;
        for (int k = 0; k < 12; ++k) {
            const auto p = testing::random_mask(24, 24, 0.05, rng);
            const auto g = testing::random_mask(24, 24, 0.05, rng);
            preds.push_back(tensor_of(p));
            masks.push_back(tensor_of(g));
            pooled += testing::recount_pixels(p, g);
            const auto [c, a, f] = testing::recount_targets(p, g, 3.0);
            correct += c;
            act += a;
            p_false += f;
        }
        const auto r = evaluate_split(preds, masks);
        CHECK(r.iou == static_cast<double>(pooled.tp) / static_cast<double>(pooled.tp + pooled.fp + pooled.fn));
        CHECK(r.pd == static_cast<double>(correct) / static_cast<double>(act));
        CHECK(r.fa == static_cast<double>(p_false) / (12.0 * 24 * 24));
        CHECK_THROWS_AS(evaluate_split(preds, {masks[0]}), DimensionError);
    }
    SUBCASE("prediction threshold is strict")
    {
        Tensor<float> s(Shape{1, 1, 2, 2}, 0.5f);
        CHECK(BinaryMap::from_tensor(s).count() == 0);
        s.data_mut()[0] = 0.5000001f;
        CHECK(BinaryMap::from_tensor(s).count() == 1);
    }
}

TEST_CASE("report files")
{
    EvalReport r;
    r.iou = 1;
    r.f1 = 1;
    r.precision = 1;
    r.recall = 1;
    r.pd = 0.5;
    r.fa = 2.5e-6;
    r.pixels = {4, 0, 0, 12};
    r.targets = {1, 2, 10, 4000000};
    std::ostringstream os;
    write_report_csv(os, r);
    CHECK(os.str() ==
          "iou,f1,precision,recall,pd,fa_e6,tp,fp,fn,tn,t_correct,t_act,p_false,p_all\n"
          "1,1,1,1,0.5,2.5,4,0,0,12,1,2,10,4000000\n");
    std::ostringstream roc;
    write_roc_csv(roc, {{1.0, 0.0, 0.0}, {0.25, 0.125, 0.75}});
    CHECK(roc.str() == "threshold,fpr,tpr\n1,0,0\n0.25,0.125,0.75\n");
}
