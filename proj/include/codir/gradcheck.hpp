#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "codir/tensor.hpp"

namespace codir {

struct GradCheckOptions {
    double step = 1e-5;
    // Coordinates probed per tensor; 0 probes every coordinate. When the
    // tensor is larger, a seeded uniform sample without replacement is used.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t coords_checked = 0;
    std::size_t worst_index = 0;
    double worst_rel_error = 0.0;
    double analytic = 0.0;
    double numeric = 0.0;
    double max_abs_analytic = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<GradCheckEntry> entries;
};

// Relative error with denominator max(|analytic|, |numeric|, 1e-8).
double gradient_relative_error(double analytic, double numeric);

// Compares backward() gradients of `loss_fn` against central differences
// (f(x + h e_i) - f(x - h e_i)) / 2h for each probed coordinate of each
// parameter. `loss_fn` must rebuild the graph on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                                const std::vector<std::string>& names, const GradCheckOptions& options = {});

double check_gradients(const std::function<Tensor()>& loss_fn, Tensor param, double step);

}  // namespace codir
