#include "arfc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

namespace arfc {

namespace {

void require_same(const BinaryMap& a, const BinaryMap& b, const char* op)
{
    if (a.h != b.h || a.w != b.w)
        throw DimensionError(std::string(op) + ": map sizes differ (" + std::to_string(a.h) + "x" +
                             std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
}

double ratio_or(long long num, long long den, double when_empty)
{
    return den == 0 ? when_empty : static_cast<double>(num) / static_cast<double>(den);
}

std::string num(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace

BinaryMap BinaryMap::from_tensor(const Tensor<float>& t, double threshold)
{
    const Shape s = t.shape();
    if (s.n != 1 || s.c != 1)
        throw DimensionError("binary map: expected a (1, 1, H, W) tensor, got " + s.str());
    BinaryMap m(s.h, s.w);
    for (std::size_t i = 0; i < m.data.size(); ++i)
        m.data[i] = t.data()[i] > threshold ? 1 : 0;
    return m;
}

Tensor<float> BinaryMap::to_tensor() const
{
    Tensor<float> t(Shape{1, 1, h, w});
    for (std::size_t i = 0; i < data.size(); ++i)
        t.data_mut()[i] = data[i] ? 1.0f : 0.0f;
    return t;
}

std::size_t BinaryMap::count() const
{
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

ComponentSet label_components(const BinaryMap& mask)
{
    ComponentSet set;
    set.h = mask.h;
    set.w = mask.w;
    set.labels.assign(mask.data.size(), -1);
    std::vector<int> stack;
    for (int start = 0; start < static_cast<int>(mask.data.size()); ++start) {
        if (!mask.data[start] || set.labels[start] >= 0)
            continue;
        Component comp;
        comp.id = static_cast<int>(set.components.size());
        set.labels[start] = comp.id;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            comp.pixels.push_back(p);
            const int r = p / mask.w;
            const int c = p % mask.w;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr;
                    const int cc = c + dc;
                    if (rr < 0 || rr >= mask.h || cc < 0 || cc >= mask.w)
                        continue;
                    const int q = rr * mask.w + cc;
                    if (mask.data[q] && set.labels[q] < 0) {
                        set.labels[q] = comp.id;
                        stack.push_back(q);
                    }
                }
        }
        std::sort(comp.pixels.begin(), comp.pixels.end());
        comp.area = static_cast<int>(comp.pixels.size());
        double sr = 0, sc = 0;
        for (int p : comp.pixels) {
            sr += p / mask.w;
            sc += p % mask.w;
        }
        comp.row = sr / comp.area;
        comp.col = sc / comp.area;
        set.components.push_back(std::move(comp));
    }
    return set;
}

PixelCounts& PixelCounts::operator+=(const PixelCounts& o)
{
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

PixelCounts pixel_counts(const BinaryMap& pred, const BinaryMap& gt)
{
    require_same(pred, gt, "pixel_metrics");
    PixelCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0;
        const bool g = gt.data[i] != 0;
        if (p && g)
            ++c.tp;
        else if (p)
            ++c.fp;
        else if (g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

PixelMetrics pixel_metrics(const PixelCounts& c)
{
    PixelMetrics m;
    m.counts = c;
    const bool both_empty = c.tp + c.fp + c.fn == 0;
    const double empty = both_empty ? 1.0 : 0.0;
    m.iou = ratio_or(c.tp, c.tp + c.fp + c.fn, empty);
    m.precision = ratio_or(c.tp, c.tp + c.fp, empty);
    m.recall = ratio_or(c.tp, c.tp + c.fn, empty);
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    return m;
}

PixelMetrics pixel_metrics(const BinaryMap& pred, const BinaryMap& gt)
{
    return pixel_metrics(pixel_counts(pred, gt));
}

TargetCounts& TargetCounts::operator+=(const TargetCounts& o)
{
    t_correct += o.t_correct;
    t_act += o.t_act;
    p_false += o.p_false;
    p_all += o.p_all;
    return *this;
}

TargetMetrics target_metrics(const TargetCounts& c)
{
    TargetMetrics m;
    m.counts = c;
    m.pd = ratio_or(c.t_correct, c.t_act, 1.0);
    m.fa = ratio_or(c.p_false, c.p_all, 0.0);
    return m;
}

TargetMetrics target_metrics(const BinaryMap& pred, const BinaryMap& gt, double match_radius)
{
    require_same(pred, gt, "target_metrics");
    const ComponentSet pc = label_components(pred);
    const ComponentSet gc = label_components(gt);

    struct Candidate {
        double d2;
        int g, p;
    };
    std::vector<Candidate> candidates;
    const double r2 = match_radius * match_radius;
    for (const Component& g : gc.components)
        for (const Component& p : pc.components) {
            const double dr = g.row - p.row;
            const double dc = g.col - p.col;
            const double d2 = dr * dr + dc * dc;
            if (d2 <= r2)
                candidates.push_back({d2, g.id, p.id});
        }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.d2 != b.d2)
            return a.d2 < b.d2;
        if (a.g != b.g)
            return a.g < b.g;
        return a.p < b.p;
    });

    std::vector<bool> g_used(gc.components.size()), p_used(pc.components.size());
    TargetMetrics m;
    for (const Candidate& c : candidates) {
        if (g_used[c.g] || p_used[c.p])
            continue;
        g_used[c.g] = p_used[c.p] = true;
        m.matches.push_back({c.g, c.p, std::sqrt(c.d2)});
    }
    TargetCounts counts;
    counts.t_act = static_cast<long long>(gc.components.size());
    counts.t_correct = static_cast<long long>(m.matches.size());
    counts.p_all = static_cast<long long>(pred.data.size());
    for (const Component& p : pc.components)
        if (!p_used[p.id])
            counts.p_false += p.area;
    const auto matches = std::move(m.matches);
    m = target_metrics(counts);
    m.matches = matches;
    return m;
}

std::vector<double> uniform_thresholds(int steps)
{
    if (steps < 1)
        throw ConfigError("roc: need at least one threshold step");
    std::vector<double> t;
    for (int i = steps; i >= 0; --i)
        t.push_back(static_cast<double>(i) / steps);
    return t;
}

std::vector<RocPoint> roc_curve(const std::vector<Tensor<float>>& saliency, const std::vector<Tensor<float>>& gt,
                                const std::vector<double>& thresholds)
{
    if (saliency.size() != gt.size())
        throw DimensionError("roc: " + std::to_string(saliency.size()) + " saliency maps for " +
                             std::to_string(gt.size()) + " masks");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] >= 0 && thresholds[i] <= 1))
            throw ConfigError("roc: threshold " + num(thresholds[i]) + " outside [0, 1]");
        if (i > 0 && !(thresholds[i] < thresholds[i - 1]))
            throw ConfigError("roc: thresholds must be strictly descending");
    }
    std::vector<PixelCounts> counts(thresholds.size());
    for (std::size_t k = 0; k < saliency.size(); ++k) {
        const BinaryMap g = BinaryMap::from_tensor(gt[k]);
        if (saliency[k].shape() != gt[k].shape())
            throw DimensionError("roc: saliency " + saliency[k].shape().str() + " vs mask " + gt[k].shape().str());
        const auto s = saliency[k].data();
        for (std::size_t t = 0; t < thresholds.size(); ++t) {
            PixelCounts& c = counts[t];
            const double th = thresholds[t];
            for (std::size_t i = 0; i < s.size(); ++i) {
                const bool p = th <= 0 || s[i] > th;
                const bool y = g.data[i] != 0;
                if (p && y)
                    ++c.tp;
                else if (p)
                    ++c.fp;
                else if (y)
                    ++c.fn;
                else
                    ++c.tn;
            }
        }
    }
    std::vector<RocPoint> roc;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
        const PixelCounts& c = counts[t];
        const double all = thresholds[t] <= 0 ? 1.0 : 0.0;
        roc.push_back({thresholds[t], ratio_or(c.fp, c.fp + c.tn, all), ratio_or(c.tp, c.tp + c.fn, all)});
    }
    return roc;
}

EvalReport evaluate_split(const std::vector<Tensor<float>>& predictions, const std::vector<Tensor<float>>& masks,
                          const EvalConfig& cfg)
{
    if (predictions.size() != masks.size())
        throw DimensionError("evaluate: " + std::to_string(predictions.size()) + " predictions for " +
                             std::to_string(masks.size()) + " masks");
    EvalReport r;
    for (std::size_t k = 0; k < predictions.size(); ++k) {
        const BinaryMap p = BinaryMap::from_tensor(predictions[k], cfg.threshold);
        const BinaryMap g = BinaryMap::from_tensor(masks[k]);
        r.pixels += pixel_counts(p, g);
        r.targets += target_metrics(p, g, cfg.match_radius).counts;
    }
    const PixelMetrics pm = pixel_metrics(r.pixels);
    r.iou = pm.iou;
    r.f1 = pm.f1;
    r.precision = pm.precision;
    r.recall = pm.recall;
    const TargetMetrics tm = target_metrics(r.targets);
    r.pd = tm.pd;
    r.fa = tm.fa;
    if (!cfg.roc_thresholds.empty())
        r.roc = roc_curve(predictions, masks, cfg.roc_thresholds);
    return r;
}

void write_report_csv(std::ostream& os, const EvalReport& r)
{
    os << "iou,f1,precision,recall,pd,fa_e6,tp,fp,fn,tn,t_correct,t_act,p_false,p_all\n";
    os << num(r.iou) << ',' << num(r.f1) << ',' << num(r.precision) << ',' << num(r.recall) << ',' << num(r.pd)
       << ',' << num(r.fa * 1e6) << ',' << r.pixels.tp << ',' << r.pixels.fp << ',' << r.pixels.fn << ','
       << r.pixels.tn << ',' << r.targets.t_correct << ',' << r.targets.t_act << ',' << r.targets.p_false << ','
       << r.targets.p_all << '\n';
}

void write_roc_csv(std::ostream& os, const std::vector<RocPoint>& roc)
{
    os << "threshold,fpr,tpr\n";
    for (const RocPoint& p : roc)
        os << num(p.threshold) << ',' << num(p.fpr) << ',' << num(p.tpr) << '\n';
}

}  // namespace arfc
