#include "codir/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "codir/error.hpp"

namespace codir {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const auto g = p.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        auto values = p.mutable_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * gj;
            v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * gj * gj;
            values[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
        }
        for (double x : values) {
            if (!std::isfinite(x)) fail(ErrorKind::Numeric, "Adam step produced a non-finite parameter");
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double global_grad_norm(const std::vector<Tensor>& params) {
    double total = 0.0;
    for (const auto& p : params) {
        for (double g : p.grad()) total += g * g;
    }
    return std::sqrt(total);
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const double factor = max_norm / norm;
        for (Tensor p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

LinearSchedule LinearSchedule::with_warmup_fraction(double peak, std::size_t total_steps, double warmup_fraction) {
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail(ErrorKind::Config, "warmup fraction must lie in [0, 1)");
    LinearSchedule s;
    s.peak = peak;
    s.total_steps = std::max<std::size_t>(total_steps, 1);
    s.warmup_steps = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
    return s;
}

double LinearSchedule::at(std::size_t step) const {
    if (step < warmup_steps) return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    return peak * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

}  // namespace codir
