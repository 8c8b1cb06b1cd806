#include "arfc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include "arfc/ops.hpp"
#include "arfc/random.hpp"

namespace arfc {

std::string GradCheckReport::summary() const
{
    std::ostringstream os;
    os << (passed ? "ok" : "FAILED") << ": max rel. error " << max_rel_error << " over " << coordinates
       << " coordinates";
    if (refined != 0 || nonsmooth != 0)
        os << ", " << refined << " at reduced step, " << nonsmooth << " non-smooth";
    if (!worst_coordinate.empty())
        os << " (worst " << worst_coordinate << ": analytic " << worst_analytic << ", numeric " << worst_numeric
           << ")";
    return os.str();
}

GradCheckReport check_gradients(const std::function<Tensor<double>()>& f, const std::vector<GradProbe>& probes,
                                const GradCheckOptions& options)
{
    Rng rng(options.seed);
    std::vector<double> projection;

    const bool tracing = options.kink_refinements > 0;
    std::uint64_t trace = 0;
    auto evaluate = [&](bool with_grad) {
        std::optional<BranchTrace> scope;
        if (tracing)
            scope.emplace();
        Tensor<double> out = f();
        if (tracing)
            trace = scope->value();
        if (projection.empty()) {
            projection.resize(out.numel());
            for (double& r : projection)
                r = rng.uniform(-1.0, 1.0);
        }
        Tensor<double> loss = weighted_sum(out, projection);
        if (with_grad)
            loss.backward();
        return loss.data()[0];
    };

    for (const GradProbe& p : probes) {
        GradProbe copy = p;
        copy.tensor.set_requires_grad(true);
        copy.tensor.zero_grad();
    }
    evaluate(true);
    const std::uint64_t base_trace = trace;

    GradCheckReport report;
    for (const GradProbe& p : probes) {
        Tensor<double> t = p.tensor;
        if (!t.has_grad())
            t.grad_mut();  // disconnected probe: analytic gradient is zero
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());

        std::vector<std::size_t> coords(t.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_probe != 0 && coords.size() > options.max_coords_per_probe) {
            rng.shuffle(coords);
            coords.resize(options.max_coords_per_probe);
            std::sort(coords.begin(), coords.end());
        }

        for (std::size_t i : coords) {
            const double original = t.data()[i];
            const double h0 = options.relative_step * std::max(std::abs(original), 1.0);
            double h = h0;
            double numeric = 0;
            bool smooth = false;
            for (int attempt = 0; attempt <= std::max(options.kink_refinements, 0); ++attempt, h /= 10) {
                NoGradGuard guard;
                t.data_mut()[i] = original + h;
                const double plus = evaluate(false);
                smooth = trace == base_trace;
                t.data_mut()[i] = original - h;
                const double minus = evaluate(false);
                smooth = smooth && trace == base_trace;
                t.data_mut()[i] = original;
                numeric = (plus - minus) / (2 * h);
                if (!tracing || smooth)
                    break;
            }
            if (!smooth && tracing) {
                ++report.nonsmooth;
                continue;
            }
            if (h < h0)
                ++report.refined;
            // Roundoff in the quotient grows like 1/h; keep the floor in step.
            const double floor = options.abs_floor * (h0 / h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++report.coordinates;
            if (rel > report.max_rel_error || report.worst_coordinate.empty()) {
                report.max_rel_error = std::max(report.max_rel_error, rel);
                if (rel >= report.max_rel_error) {
                    report.worst_coordinate = p.name + "[" + std::to_string(i) + "]";
                    report.worst_analytic = analytic[i];
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    report.passed = report.max_rel_error <= options.tolerance;
    return report;
}

}  // namespace arfc
