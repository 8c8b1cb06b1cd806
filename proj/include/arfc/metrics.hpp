#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "arfc/tensor.hpp"

namespace arfc {

/// Row-major 0/1 map.
struct BinaryMap {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> data;

    BinaryMap() = default;
    BinaryMap(int h, int w) : h(h), w(w), data(static_cast<std::size_t>(h) * w, 0) {}

    /// Pixels of a (1, 1, H, W) tensor strictly above `threshold`.
    static BinaryMap from_tensor(const Tensor<float>& t, double threshold = 0.5);
    Tensor<float> to_tensor() const;

    std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * w + c]; }
    std::size_t count() const;
};

struct Component {
    int id = 0;
    std::vector<int> pixels;  ///< flat indices r * w + c, ascending
    double row = 0;           ///< centroid, mean of pixel rows
    double col = 0;
    int area = 0;
};

/// Foreground partition under 8-connectivity. labels[i] is the component id
/// of pixel i, or -1 for background. Ids follow raster order of each
/// component's first pixel.
struct ComponentSet {
    int h = 0;
    int w = 0;
    std::vector<int> labels;
    std::vector<Component> components;
};

ComponentSet label_components(const BinaryMap& mask);

struct PixelCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    PixelCounts& operator+=(const PixelCounts& o);
};

struct PixelMetrics {
    double iou = 0, precision = 0, recall = 0, f1 = 0;
    PixelCounts counts;
};

PixelCounts pixel_counts(const BinaryMap& pred, const BinaryMap& gt);
/// Ratios from counts. A 0/0 ratio is 1 when both masks are empty and 0
/// otherwise; F1 is 0 when precision + recall is 0.
PixelMetrics pixel_metrics(const PixelCounts& c);
PixelMetrics pixel_metrics(const BinaryMap& pred, const BinaryMap& gt);

struct TargetMatch {
    int gt_id = 0;
    int pred_id = 0;
    double distance = 0;
};

struct TargetCounts {
    long long t_correct = 0;
    long long t_act = 0;
    long long p_false = 0;
    long long p_all = 0;
    TargetCounts& operator+=(const TargetCounts& o);
};

struct TargetMetrics {
    double pd = 0;  ///< t_correct / t_act; 1 when there are no targets
    double fa = 0;  ///< p_false / p_all
    TargetCounts counts;
    std::vector<TargetMatch> matches;
};

/// One-to-one greedy matching of component centroids: candidate pairs within
/// match_radius are taken nearest first, ties by lower ground-truth id, then
/// lower predicted id. Unmatched predicted components count as false pixels.
TargetMetrics target_metrics(const BinaryMap& pred, const BinaryMap& gt, double match_radius = 3.0);
TargetMetrics target_metrics(const TargetCounts& c);

struct RocPoint {
    double threshold = 0;
    double fpr = 0;
    double tpr = 0;
};

/// Pixel-level ROC accumulated over a split. A pixel is foreground at
/// threshold t when saliency > t; t = 0 selects every pixel. Thresholds must
/// be strictly descending within [0, 1]. A rate with a zero denominator is 0
/// except at t = 0, where both rates are 1.
std::vector<RocPoint> roc_curve(const std::vector<Tensor<float>>& saliency, const std::vector<Tensor<float>>& gt,
                                const std::vector<double>& thresholds);
/// 1, 1 - step, ..., 0.
std::vector<double> uniform_thresholds(int steps);

struct EvalConfig {
    double threshold = 0.5;
    double match_radius = 3.0;
    std::vector<double> roc_thresholds;  ///< empty: no ROC
};

struct EvalReport {
    double iou = 0, f1 = 0, precision = 0, recall = 0;
    double pd = 0;
    double fa = 0;  ///< per pixel; CSV reports fa * 1e6
    PixelCounts pixels;
    TargetCounts targets;
    std::vector<RocPoint> roc;
};

/// Micro-averaged: counts from every image are summed before ratios are
/// taken. predictions are saliency maps (or 0/1 masks), binarized with
/// cfg.threshold.
EvalReport evaluate_split(const std::vector<Tensor<float>>& predictions, const std::vector<Tensor<float>>& masks,
                          const EvalConfig& cfg = {});

/// Header line plus one data line.
void write_report_csv(std::ostream& os, const EvalReport& report);
/// threshold,fpr,tpr header plus one line per point.
void write_roc_csv(std::ostream& os, const std::vector<RocPoint>& roc);

}  // namespace arfc
