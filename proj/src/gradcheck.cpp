#include "codir/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "codir/error.hpp"

namespace codir {

double gradient_relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

namespace {

double probe(const std::function<Tensor()>& loss_fn) {
    NoGradGuard no_grad;
    const double value = loss_fn().item();
    if (!std::isfinite(value)) fail(ErrorKind::Numeric, "check_gradients: loss is not finite at a probe point");
    return value;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                                const std::vector<std::string>& names, const GradCheckOptions& options) {
    if (!(options.step > 0.0)) fail(ErrorKind::Parameter, "check_gradients: step must be positive");
    if (names.size() != params.size()) fail(ErrorKind::Parameter, "check_gradients: one name per parameter required");

    std::vector<std::vector<double>> analytic(params.size());
    {
        TapeScope scope;
        for (Tensor p : params) p.zero_grad();
        Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) fail(ErrorKind::Numeric, "check_gradients: loss is not finite");
        backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto g = params[i].grad();
            analytic[i] = g.empty() ? std::vector<double>(params[i].numel(), 0.0) : std::vector<double>(g.begin(), g.end());
        }
    }

    std::mt19937_64 rng(options.seed);
    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor param = params[pi];
        std::vector<std::size_t> coords(param.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }

        GradCheckEntry entry;
        entry.name = names[pi];
        entry.coords_checked = coords.size();
        for (double a : analytic[pi]) entry.max_abs_analytic = std::max(entry.max_abs_analytic, std::abs(a));
        auto values = param.mutable_values();
        for (std::size_t c : coords) {
            const double saved = values[c];
            values[c] = saved + options.step;
            const double up = probe(loss_fn);
            values[c] = saved - options.step;
            const double down = probe(loss_fn);
            values[c] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double err = gradient_relative_error(analytic[pi][c], numeric);
            if (err >= entry.worst_rel_error) {
                entry.worst_rel_error = err;
                entry.worst_index = c;
                entry.analytic = analytic[pi][c];
                entry.numeric = numeric;
            }
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.worst_rel_error);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

double check_gradients(const std::function<Tensor()>& loss_fn, Tensor param, double step) {
    GradCheckOptions options;
    options.step = step;
    return check_gradients(loss_fn, {param}, {"param"}, options).max_rel_error;
}

}  // namespace codir
