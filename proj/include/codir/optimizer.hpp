#pragma once

#include <cstddef>
#include <vector>

#include "codir/tensor.hpp"

namespace codir {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Parameters that received no gradient are treated as
// having a zero gradient.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options = {});

    void step(double lr);
    void zero_grad();
    std::size_t steps() const { return steps_; }
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamOptions options_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t steps_ = 0;
};

double global_grad_norm(const std::vector<Tensor>& params);
// Rescales gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

// Linear warmup to `peak` over `warmup_steps`, then linear decay to zero at
// `total_steps`.
struct LinearSchedule {
    double peak = 1e-3;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;

    static LinearSchedule with_warmup_fraction(double peak, std::size_t total_steps, double warmup_fraction);
    double at(std::size_t step) const;
};

}  // namespace codir
